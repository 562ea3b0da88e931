#pragma once

#include <cstddef>
#include <span>

namespace rkld::stats {

// Welford accumulator.
class Moments {
public:
    void add(double x);
    void merge(const Moments& other);

    std::size_t count() const { return n_; }
    double mean() const { return mean_; }
    double variance() const;  // unbiased; 0 for fewer than two samples
    double stddev() const;
    double standard_error() const;

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

struct Estimate {
    double mean = 0.0;
    double standard_error = 0.0;
};

// Mean of a correlated series with a non-overlapping batch-means error bar.
Estimate batch_means(std::span<const double> series, std::size_t batches);

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
};

// Ordinary least squares; slope_se from residual scatter (0 for two points).
LineFit ols(std::span<const double> x, std::span<const double> y);

// Weighted least squares with known ordinate errors; slope_se from the errors.
LineFit wls(std::span<const double> x, std::span<const double> y, std::span<const double> sigma);

// Standard error of a Bernoulli proportion; uses p(1-p)/n with a floor at
// one success so that p = 0 or 1 still yields a nonzero band.
double binomial_se(double p, std::size_t n);

}  // namespace rkld::stats
