#pragma once

// Finite-sum empirical risks over the spectral representation:
//   L(x) = (1/n) sum_i l(<x, psi_gamma(z_i)>, y_i)  [+ (lambda0/2) ||x||^2]
// with feature vectors psi_gamma(z_i) precomputed at construction.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rkld/spectral_space.hpp"

namespace rkld {

struct DataPoint {
    double z = 0.0;
    double y = 0.0;
};

class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<DataPoint> points);

    std::size_t size() const { return points_.size(); }
    std::span<const DataPoint> points() const { return points_; }
    const DataPoint& operator[](std::size_t i) const { return points_[i]; }

    // CSV with mandatory header "z,y".
    static Dataset from_csv(const std::filesystem::path& path);
    void write_csv(const std::filesystem::path& path) const;

    // z ~ U[0, 1], y = sin(2 pi z) + N(0, noise_sigma^2).
    static Dataset synthetic_regression(std::size_t n, std::uint64_t seed, double noise_sigma = 0.1);
    // z ~ U[0, 1], y = sign(sin(2 pi z)) in {-1, +1}.
    static Dataset synthetic_classification(std::size_t n, std::uint64_t seed);

private:
    std::vector<DataPoint> points_;
};

enum class LossKind {
    squared,       // (u - y)^2 / 2
    logistic,      // log(1 + exp(-y u))
    savage,        // 1 / (1 + exp(y u))^2
    squared_sine,  // (u - y)^2 / 2 + a sin(u - y), a = kSineAmplitude
};

inline constexpr double kSineAmplitude = 0.5;

std::string_view to_string(LossKind kind);
LossKind parse_loss(std::string_view text);

struct LossFamily {
    LossKind kind = LossKind::squared;
    double second_derivative_bound = 1.0;              // G = sup |l''|
    std::optional<double> first_derivative_bound;      // B_l = sup |l'|, absent if unbounded

    // Bounds are taken over the labels present in the dataset.
    static LossFamily make(LossKind kind, const Dataset& data);

    double value(double u, double y) const;
    double d1(double u, double y) const;
    double d2(double u, double y) const;

    // Savage is the only non-convex family.
    bool convex() const { return kind != LossKind::savage; }
    // Infimum of l over u (0 for the bounded-below families used here).
    double infimum() const { return 0.0; }
};

// Scratch buffers for allocation-free gradient evaluation inside chains.
struct GradientWorkspace {
    std::vector<double> margins;
    std::vector<double> weights;
};

class ObjectiveSpec {
public:
    ObjectiveSpec(Dataset data, LossKind loss, KernelSpec kernel, std::size_t n_modes,
                  std::optional<double> lambda0 = std::nullopt);

    const Dataset& dataset() const { return data_; }
    const LossFamily& loss() const { return loss_; }
    const KernelSpec& kernel() const { return kernel_; }
    std::size_t n_modes() const { return n_modes_; }
    std::size_t n_train() const { return data_.size(); }
    std::optional<double> lambda0() const { return lambda0_; }

    // psi_gamma(z_i), row i of a row-major n_train x n_modes matrix.
    std::span<const double> feature(std::size_t i) const;
    // Truncated K_gamma(z_i, z_i) = ||psi_gamma(z_i)||^2.
    double feature_norm_squared(std::size_t i) const { return feature_sq_norms_[i]; }
    std::span<const std::uint32_t> all_indices() const { return all_indices_; }

    double risk(const SpectralVector& x) const;
    SpectralVector grad(const SpectralVector& x) const;
    // (1/|I|) sum_{i in I} grad l_i(x); the batch must be nonempty and in range.
    SpectralVector stochastic_grad(const SpectralVector& x, std::span<const std::uint32_t> batch) const;
    SpectralVector sample_grad(const SpectralVector& x, std::size_t i) const;

    // Hot-path variant used by the chains: no allocation once the workspace is warm.
    void batch_grad_into(const SpectralVector& x, std::span<const std::uint32_t> batch,
                         SpectralVector& out, GradientWorkspace& ws) const;

    // D^2 L(x) . (h, k)
    double second_derivative(const SpectralVector& x, const SpectralVector& h,
                             const SpectralVector& k) const;
    Eigen::MatrixXd hessian(const SpectralVector& x) const;

    // (1/n) sum_i ||grad l_i(x) - grad L(x)||^2
    double gradient_dispersion(const SpectralVector& x) const;

private:
    void check_modes(const SpectralVector& x) const;

    Dataset data_;
    LossFamily loss_;
    KernelSpec kernel_;
    std::size_t n_modes_;
    std::optional<double> lambda0_;
    std::vector<double> features_;
    std::vector<double> feature_sq_norms_;
    std::vector<std::uint32_t> all_indices_;
};

// sup over the data of the truncated kernel diagonal K_gamma(z_i, z_i).
double kernel_diagonal_max(const ObjectiveSpec& obj);

// M = G R_gamma (+ lambda0).
double smoothness_constant(const ObjectiveSpec& obj);

// B = B_l sup_i ||psi_gamma(z_i)||; absent for unbounded losses or when lambda0 is set.
std::optional<double> gradient_bound(const ObjectiveSpec& obj);

// G sqrt(R_gamma sum_{k<=N} mu_k^{gamma - 2 alpha}): bound on |D^2 L(x).(h,k)| for
// ||h|| = 1, ||k||_alpha = 1.
double second_derivative_bound(const ObjectiveSpec& obj, double alpha);

// Exact E||grad L - g||^2 over uniformly drawn size-m subsets without replacement.
double minibatch_variance(const ObjectiveSpec& obj, const SpectralVector& x, std::size_t m);

enum class Regime { strict, bounded };
std::string_view to_string(Regime regime);

struct Dissipativity {
    Regime regime;
    double m;
    double c;
};

class RegimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Regime selection: strict when lambda > M mu0, else bounded when B exists.
// Throws RegimeError otherwise.
Regime detect_regime(const ObjectiveSpec& obj, double lambda);

// Constants (m, c) of <Ax - grad L(x), x> <= -m ||x||^2 + c. x_star_norm is
// only used in the strict regime.
Dissipativity dissipativity_constants(const ObjectiveSpec& obj, double lambda, double x_star_norm);

struct MinimizerOptions {
    double grad_tol = 1e-9;
    std::size_t max_iterations = 500;
    double divergence_norm = 1e8;
};

struct Minimizers {
    SpectralVector x_star;   // argmin L
    SpectralVector x_tilde;  // argmin L + (lambda/2) ||x||_HK^2
    double l_star = 0.0;     // L(x_star)
    double l_tilde = 0.0;    // L(x_tilde), the risk without the penalty
    bool local = false;      // true when the loss is non-convex
};

class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Damped Newton with Levenberg shifts from x = 0. Throws ConvergenceError on
// non-convergence or divergence.
Minimizers find_minimizers(const ObjectiveSpec& obj, double lambda, const MinimizerOptions& opts = {});

// The two halves of find_minimizers, usable separately when L has no
// attained minimizer (e.g. logistic loss on separable data).
SpectralVector minimize_risk(const ObjectiveSpec& obj, const MinimizerOptions& opts = {});
SpectralVector minimize_regularized(const ObjectiveSpec& obj, double lambda, const MinimizerOptions& opts = {});

// Regularized objective L(x) + (lambda/2) ||x||_HK^2.
double regularized_objective(const ObjectiveSpec& obj, double lambda, const SpectralVector& x);

}  // namespace rkld
