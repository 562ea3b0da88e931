#pragma once

// Chain iterators on the truncated spectral space:
//   GLD   X+ = S (X - eta grad L(X) + sqrt(2 eta / beta) xi)
//   SGLD  same with a minibatch gradient drawn without replacement
//   OU    Z+ = S (Z + sqrt(2 eta / beta) xi)
// The noise xi is mode-indexed: coefficient k at step n depends only on
// (noise key, n, k), so runs with different n_modes share their common modes.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rkld/objective.hpp"
#include "rkld/rng.hpp"
#include "rkld/spectral_space.hpp"

namespace rkld {

enum class ChainMode { gld, sgld, ou };
std::string_view to_string(ChainMode mode);
ChainMode parse_chain_mode(std::string_view text);

struct ChainConfig {
    double eta = 0.01;
    double beta = 1.0;
    double lambda = 1.0;
    std::size_t n_modes = 16;
    std::optional<std::size_t> minibatch;  // nullopt = full batch
    std::uint64_t seed = 0;
    std::uint64_t chain_id = 0;
    std::uint64_t horizon = 1000;
    std::uint64_t burn_in = 200;
    SpectralVector x0;  // empty means zeros

    // Throws std::invalid_argument naming the offending field.
    void validate() const;
    // Also checks the objective's mode count and minibatch size.
    void validate(const ObjectiveSpec& obj) const;
    double noise_scale() const;  // sqrt(2 eta / beta)
    SpectralVector initial_point() const;
};

// Default burn-in: 20% of the horizon.
std::uint64_t default_burn_in(std::uint64_t horizon);
// Checkpoint cadence max(1, horizon / 1000).
std::uint64_t checkpoint_cadence(std::uint64_t horizon);

struct ChainState {
    SpectralVector x;
    std::uint64_t step = 0;
    CounterRng noise;
    CounterRng minibatch;

    static ChainState initial(const ChainConfig& cfg);
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// n_modes i.i.d. N(0, 1) coefficients for the given step of the stream.
SpectralVector gaussian_modes(std::size_t n_modes, const CounterRng& rng, std::uint64_t step);

// Uniform size-m subset of {0..n-1} without replacement, returned sorted.
// Partial Fisher-Yates driven by (rng, step); m = n returns 0..n-1.
void draw_batch(const CounterRng& rng, std::uint64_t step, std::size_t n, std::size_t m,
                std::vector<std::uint32_t>& scratch, std::vector<std::uint32_t>& out);

// Reusable per-chain stepping machinery; allocation-free after construction.
class Stepper {
public:
    // obj may be null only for ChainMode::ou.
    Stepper(const ChainConfig& cfg, const ObjectiveSpec* obj, ChainMode mode);
    // Noise-only chain on the given kernel.
    Stepper(const ChainConfig& cfg, const KernelSpec& kernel);

    ChainMode mode() const { return mode_; }
    const DiagonalOperator& resolvent() const { return resolvent_; }

    // One step with the state's own noise stream.
    void step(ChainState& s);
    // One step with caller-supplied noise (length n_modes); used for coupling.
    void step_with_noise(ChainState& s, std::span<const double> xi);
    // Drift-only step (noise forced to zero).
    void step_noiseless(ChainState& s);

private:
    void advance(ChainState& s, const double* xi, double sigma);

    ChainConfig cfg_;
    const ObjectiveSpec* obj_;
    ChainMode mode_;
    DiagonalOperator resolvent_;
    double sigma_;
    std::size_t batch_size_;
    SpectralVector grad_;
    SpectralVector next_;
    std::vector<double> xi_;
    std::vector<std::uint32_t> batch_;
    std::vector<std::uint32_t> scratch_;
    GradientWorkspace ws_;
};

ChainState gld_step(const ChainState& state, const ChainConfig& cfg, const ObjectiveSpec& obj);
ChainState sgld_step(const ChainState& state, const ChainConfig& cfg, const ObjectiveSpec& obj);
ChainState ou_step(const ChainState& state, const ChainConfig& cfg, const KernelSpec& kernel = {});

// Per-mode stationary variance (2 eta / beta) a_k^2 / (1 - a_k^2) of the OU
// chain, a_k = 1 / (1 + lambda eta / mu_k).
std::vector<double> ou_stationary_variance(const KernelSpec& spec, double lambda, double eta,
                                           double beta, std::size_t n_modes);

// Two GLD chains driven by the same noise. Returns d_0..d_horizon.
std::vector<double> coupled_run(const ChainConfig& cfg, const ObjectiveSpec& obj,
                                const SpectralVector& x0a, const SpectralVector& x0b,
                                std::uint64_t horizon);

struct LogRow {
    std::uint64_t step = 0;
    double norm = 0.0;
    double risk = 0.0;
    double reg_objective = 0.0;
    double phi = 0.0;
    double cesaro_phi = 0.0;  // nan before the first retained step
};

// Running sums over retained steps (step > burn_in).
struct CesaroAccumulator {
    std::uint64_t count = 0;
    double phi_sum = 0.0;
    double risk_sum = 0.0;
    double norm_sum = 0.0;

    void add(double phi, double risk, double norm);
    double phi() const;
    double risk() const;
    double norm() const;
};

struct RunSummary {
    ChainMode mode = ChainMode::gld;
    std::uint64_t seed = 0;
    std::uint64_t chain_id = 0;
    std::uint64_t burn_in = 0;
    std::uint64_t horizon = 0;
    std::vector<LogRow> rows;
    CesaroAccumulator cesaro;
    ChainState final_state;
    bool aborted = false;
    std::string abort_reason;

    double cesaro_phi() const { return cesaro.phi(); }
    double cesaro_risk() const { return cesaro.risk(); }
    std::uint64_t retained() const { return cesaro.count; }

    // CSV columns step,norm,risk,reg_objective,phi,cesaro_phi.
    void write_csv(const std::filesystem::path& path) const;
};

// Observer of every retained state (step > burn_in).
using StateObserver = std::function<void(const ChainState&)>;
// Test function evaluated along the chain; defaults to the sigmoid statistic.
using TestFunction = std::function<double(const SpectralVector&)>;

struct RunOptions {
    double l_star = 0.0;               // reference for the sigmoid statistic
    TestFunction phi;                  // overrides the sigmoid statistic when set
    std::vector<StateObserver> observers;
    bool record_log = true;
    std::optional<ChainState> resume;  // continue from a checkpointed state
    CesaroAccumulator resume_cesaro;
};

// OU mode ignores obj for the dynamics but still reports its risk.
RunSummary run_chain(const ChainConfig& cfg, const ObjectiveSpec& obj, ChainMode mode,
                     const RunOptions& opts = {});

// phi(x) = sigma(L(x) - l_star) - 1/2 with the logistic sigma.
double sigmoid_gap(double gap);

// Binary checkpoint: magic "RKLD1", format version, little-endian payload.
struct Checkpoint {
    ChainState state;
    CesaroAccumulator cesaro;
};
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& cp);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Deterministic parallel map: fn(i) for i in [0, count) on up to `threads`
// workers; results must be written to per-index slots by fn.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace rkld
