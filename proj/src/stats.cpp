#include "rkld/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rkld::stats {

void Moments::add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
}

void Moments::merge(const Moments& other) {
    if (other.n_ == 0) return;
    if (n_ == 0) {
        *this = other;
        return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(other.n_);
    const double delta = other.mean_ - mean_;
    const double total = na + nb;
    mean_ += delta * nb / total;
    m2_ += other.m2_ + delta * delta * na * nb / total;
    n_ += other.n_;
}

double Moments::variance() const { return n_ < 2 ? 0.0 : m2_ / static_cast<double>(n_ - 1); }

double Moments::stddev() const { return std::sqrt(variance()); }

double Moments::standard_error() const {
    return n_ == 0 ? 0.0 : std::sqrt(variance() / static_cast<double>(n_));
}

Estimate batch_means(std::span<const double> series, std::size_t batches) {
    if (batches < 2) throw std::invalid_argument("batch_means: need at least two batches");
    const std::size_t per = series.size() / batches;
    if (per == 0) throw std::invalid_argument("batch_means: series shorter than batch count");
    Moments across;
    for (std::size_t b = 0; b < batches; ++b) {
        double s = 0.0;
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) s += series[i];
        across.add(s / static_cast<double>(per));
    }
    return {across.mean(), across.standard_error()};
}

LineFit ols(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw std::invalid_argument("ols: need matching spans of length >= 2");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0) throw std::invalid_argument("ols: degenerate abscissae");
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    if (n > 2) {
        double rss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - fit.intercept - fit.slope * x[i];
            rss += r * r;
        }
        fit.slope_se = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
    }
    return fit;
}

LineFit wls(std::span<const double> x, std::span<const double> y, std::span<const double> sigma) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n || sigma.size() != n)
        throw std::invalid_argument("wls: need matching spans of length >= 2");
    double sw = 0.0, mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(sigma[i] > 0.0)) throw std::invalid_argument("wls: ordinate errors must be positive");
        const double w = 1.0 / (sigma[i] * sigma[i]);
        sw += w;
        mx += w * x[i];
        my += w * y[i];
    }
    mx /= sw;
    my /= sw;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = 1.0 / (sigma[i] * sigma[i]);
        sxx += w * (x[i] - mx) * (x[i] - mx);
        sxy += w * (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0) throw std::invalid_argument("wls: degenerate abscissae");
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.slope_se = std::sqrt(1.0 / sxx);
    return fit;
}

double binomial_se(double p, std::size_t n) {
    if (n == 0) return 0.0;
    const double nd = static_cast<double>(n);
    const double floor_p = 1.0 / nd;
    const double q = std::clamp(p, floor_p, 1.0 - floor_p);
    return std::sqrt(q * (1.0 - q) / nd);
}

}  // namespace rkld::stats
