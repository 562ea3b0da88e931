#pragma once

// Closed-form theory constants and the simulation experiments that confront
// them: ergodic decay, weak error in eta, Galerkin error in N, Gibbs
// concentration, minibatch discrepancy and the tail bound assembly.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rkld/dynamics.hpp"
#include "rkld/objective.hpp"

namespace rkld {

// sigma(L(x) - l_star) - 1/2, in [0, 1/2) when l_star <= L(x).
double sigmoid_statistic(const ObjectiveSpec& obj, const SpectralVector& x, double l_star);

// ||x||^2 / (1 + ||x||^2): bounded, smooth, defined on every truncation level.
double norm_ratio(const SpectralVector& x);

enum class TestFunctionKind { sigmoid_gap, norm_ratio, constant };
std::string_view to_string(TestFunctionKind kind);
TestFunctionKind parse_test_function(std::string_view text);
TestFunction make_test_function(TestFunctionKind kind, const ObjectiveSpec& obj, double l_star);

// Strict regime: (lambda/mu0 - M) / (1 + eta lambda/mu0). Requires lambda > M mu0.
double spectral_gap_strict(double lambda, double mu0, double M, double eta);

// Formula evaluation for the bounded-gradient regime (not a certified gap):
// min(lambda/(2 mu0), 1/2) delta / (4 log(kappa (Vbar + 1) / (1 - delta)))
// with bbar = max(b, 1), kappa = bbar + 1, r = rho^{1/eta},
// Vbar = 4 bbar / (sqrt((1 + r)/2) - r), rho = 1 / (1 + lambda eta / mu0).
// eta = 0 uses the limit r = exp(-lambda / mu0).
double spectral_gap_bounded(double lambda, double mu0, double eta, double b, double delta);

struct GapExtra {
    double b = 0.0;      // Lyapunov offset (bounded regime)
    double delta = 0.5;  // minorization level (bounded regime)
};
double spectral_gap(Regime regime, double lambda, double mu0, double M, double eta, double beta,
                    const GapExtra& extra = {});

// sqrt(sum_k stationary OU variance): k(1) via Jensen from the exact second moment.
double k1_bound(const KernelSpec& spec, double lambda, double eta, double beta, std::size_t n_modes);

struct LyapunovConstants {
    double rho = 0.0;
    double b = 0.0;
};
// strict: rho = (1 + eta M)/(1 + lambda eta/mu0), b = ||x*|| + 2 k1
// bounded: rho = 1/(1 + lambda eta/mu0), b = mu0 B / lambda + k1
LyapunovConstants lyapunov_constants(Regime regime, double eta, double lambda, double mu0, double M,
                                     std::optional<double> B, std::optional<double> x_star_norm, double k1);

// (1/beta)(sqrt(2M/lambda) + 1) + lambda (||x~||_HK / sqrt(beta) + ||x~||_HK^2)
double gibbs_concentration_bound(double M, double lambda, double beta, double x_tilde_hk);

// n beta eta (n_tr - m) / (m (n_tr - 1)); 0 when m = n_tr.
double minibatch_discrepancy_rate(std::uint64_t n, double beta, double eta, std::size_t n_train,
                                  std::size_t m);

struct TheoryInputs {
    double eta = 0.01;
    double beta = 1.0;
    double lambda = 1.0;
    std::optional<double> x_star_norm;  // needed in the strict regime
    double x_tilde_hk = 0.0;
    std::uint64_t n_steps = 0;          // for r_n
    std::optional<std::size_t> minibatch;
    double delta = 0.5;                 // bounded-regime gap input
};

struct TheoryConstants {
    Regime regime = Regime::strict;
    double M = 0.0;
    std::optional<double> B;
    double m = 0.0;
    double c = 0.0;
    double rho = 0.0;
    double b = 0.0;
    double k1 = 0.0;
    double gap_eta = 0.0;
    double gap_0 = 0.0;
    bool gap_certified = true;  // false for the bounded-regime formula
    double c_beta = 1.0;
    double gibbs_bound = 0.0;
    double r_n = 0.0;
};

TheoryConstants theory_constants(const ObjectiveSpec& obj, const TheoryInputs& in);

struct TailTerms {
    double optimization = 0.0;    // L(x~) - L(x*)
    double ergodic = 0.0;         // exp(-gap_eta (eta n - 1))
    double discretization = 0.0;  // (c_beta / gap_0) eta^{1/2 - kappa}
    double gibbs = 0.0;
    double rhs = 0.0;             // (5 / delta) * sum
};
TailTerms theorem_rhs(const TheoryConstants& tc, double eta, std::uint64_t n, double delta, double kappa,
                      double optimization_gap);

struct RateFit {
    std::vector<double> abscissae;
    std::vector<double> ordinates;
    std::vector<double> errors;  // one standard error per ordinate
    double slope = 0.0;
    double slope_se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    bool inconclusive = false;
    std::string note;
};

// Weighted log-log fit with ordinate errors propagated as se/y; 95% interval.
// Inconclusive when fewer than 4 points, a nonpositive ordinate, or the
// largest error exceeds half the smallest gap between consecutive ordinates.
RateFit fit_rate(std::vector<double> x, std::vector<double> y, std::vector<double> se);

struct ExperimentOptions {
    double beta = 1.0;
    double lambda = 1.0;
    std::uint64_t seed = 0;
    double time_horizon = 1000.0;   // in units of eta * steps
    double burn_fraction = 0.2;
    std::size_t batches = 20;       // batch means for paired errors
    TestFunctionKind test_function = TestFunctionKind::norm_ratio;
    double l_star = 0.0;
};

struct LadderPoint {
    double eta = 0.0;
    std::uint64_t steps = 0;
    double mean_phi = 0.0;
    double error = 0.0;     // |mean_phi - reference|
    double error_se = 0.0;  // paired batch-means error
};

struct WeakErrorResult {
    std::vector<LadderPoint> points;
    double reference = 0.0;
    double fine_step = 0.0;
    RateFit fit;
};

// All chains follow one Brownian path on a common fine grid: the increment
// over a coarse step is the sum of the fine increments it spans. Every eta and
// eta_ref must be an integer multiple of the grid.
WeakErrorResult weak_error_vs_eta(const ObjectiveSpec& obj, const std::vector<double>& etas, double eta_ref,
                                  const ExperimentOptions& opts);

struct GalerkinPoint {
    std::size_t n = 0;  // truncation index N (n_modes = N + 1)
    double abscissa = 0.0;
    double mean_phi = 0.0;
    double error = 0.0;
    double error_se = 0.0;
};

struct GalerkinResult {
    std::vector<GalerkinPoint> points;
    double reference = 0.0;
    RateFit fit;
};

// Chains at each N share the reference run's noise on their common modes.
// Abscissa mu_{N+1}^{1/2 - kappa}.
GalerkinResult galerkin_error_vs_n(const Dataset& data, LossKind loss, const KernelSpec& kernel,
                                   std::optional<double> lambda0, const std::vector<std::size_t>& n_list,
                                   std::size_t n_ref, double eta, double kappa, const ExperimentOptions& opts);

struct DecayEstimate {
    double rate = 0.0;
    double rate_se = 0.0;
    double reference = 0.0;
    std::vector<double> times;
    std::vector<double> gaps;
    std::size_t fit_points = 0;
    bool skipped = false;       // phi constant along the run
    bool inconclusive = false;
};

// Ensemble E phi(X_n) from `replicas` chains started at cfg.x0, compared with
// a long run's Cesaro tail; fits log|gap| against eta n over the window
// before the gap drops into MC noise.
DecayEstimate ergodicity_decay_estimate(const ChainConfig& cfg, const ObjectiveSpec& obj, const TestFunction& phi,
                                        std::size_t replicas, std::size_t stride, std::uint64_t reference_horizon,
                                        std::size_t threads);

struct GibbsGap {
    double gap = 0.0;  // Cesaro mean of L minus L(x~)
    double se = 0.0;
    double first_half = 0.0;
    double second_half = 0.0;
    double half_se = 0.0;
    bool stationary = true;
    std::size_t replicas = 0;
};

// Independent GLD chains (chain ids 0..replicas-1); retained steps after burn-in.
GibbsGap gibbs_gap_empirical(const ChainConfig& cfg, const ObjectiveSpec& obj, double l_tilde, std::size_t replicas,
                             std::size_t threads);

struct GaussianGap {
    double discrete = 0.0;    // exact stationary value of the eta-chain
    double continuous = 0.0;  // eta -> 0 limit tr(H Q^{-1}) / (2 beta)
};
// Quadratic objectives only: exact E[L] - L(x~) under the chain's Gaussian invariant law.
GaussianGap gaussian_gibbs_gap(const ObjectiveSpec& obj, double lambda, double eta, double beta);

struct DiscrepancyPoint {
    std::size_t m = 0;
    double r_n = 0.0;
    double discrepancy = 0.0;
    double se = 0.0;
    double c_fit = 0.0;  // discrepancy / (sqrt(r_n) + r_n^{1/4}); 0 when r_n = 0
};

// Paired GLD/SGLD replicas sharing the noise stream, phi evaluated at step `horizon`.
std::vector<DiscrepancyPoint> sgld_discrepancy(const ChainConfig& cfg, const ObjectiveSpec& obj,
                                               const TestFunction& phi, std::uint64_t horizon,
                                               const std::vector<std::size_t>& m_list, std::size_t replicas,
                                               std::size_t threads);

struct TailPoint {
    std::uint64_t n = 0;
    double probability = 0.0;
    double se = 0.0;
    TailTerms terms;
};

// Fraction of replicas with L(X_n) - l_star > delta at each checkpoint.
std::vector<TailPoint> theorem_tail_bound(const ChainConfig& cfg, const ObjectiveSpec& obj, double delta,
                                          double l_star, const TheoryConstants& tc, double kappa,
                                          double optimization_gap, const std::vector<std::uint64_t>& checkpoints,
                                          std::size_t replicas, std::size_t threads);

struct DriftPoint {
    std::uint64_t n = 0;
    double mean_norm = 0.0;
    double se = 0.0;
    double bound = 0.0;  // rho^n ||x0|| + b
};

// Ensemble mean of ||X_n|| against the Lyapunov envelope.
std::vector<DriftPoint> lyapunov_drift(const ChainConfig& cfg, const ObjectiveSpec& obj,
                                       const LyapunovConstants& lc, const std::vector<std::uint64_t>& checkpoints,
                                       std::size_t replicas, std::size_t threads);

struct AssumptionCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Computable predicates for the standing assumptions of the analysis.
std::vector<AssumptionCheck> check_assumptions(const ObjectiveSpec& obj, double lambda, std::uint64_t seed);

}  // namespace rkld
