#include "rkld/dynamics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <cstring>
#include <mutex>
#include <thread>
#include <type_traits>

#include "rkld/simd.hpp"

namespace rkld {

std::string_view to_string(ChainMode mode) {
    switch (mode) {
        case ChainMode::gld:
            return "gld";
        case ChainMode::sgld:
            return "sgld";
        case ChainMode::ou:
            return "ou";
    }
    return "?";
}

ChainMode parse_chain_mode(std::string_view text) {
    if (text == "gld") return ChainMode::gld;
    if (text == "sgld") return ChainMode::sgld;
    if (text == "ou") return ChainMode::ou;
    throw std::invalid_argument("unknown chain mode '" + std::string(text) + "'");
}

void ChainConfig::validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("chain.eta must be positive");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("chain.beta must be positive");
    if (beta < eta) throw std::invalid_argument("chain.beta must be >= chain.eta");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("chain.lambda must be positive");
    if (n_modes == 0) throw std::invalid_argument("chain.n_modes must be positive");
    if (horizon == 0) throw std::invalid_argument("chain.horizon must be positive");
    if (burn_in >= horizon) throw std::invalid_argument("chain.burn_in must be < chain.horizon");
    if (minibatch && *minibatch == 0) throw std::invalid_argument("chain.minibatch must be >= 1");
    if (x0.n_modes() != 0 && x0.n_modes() != n_modes)
        throw std::invalid_argument("chain.x0 has " + std::to_string(x0.n_modes()) + " modes, expected " +
                                    std::to_string(n_modes));
    if (!x0.all_finite()) throw std::invalid_argument("chain.x0 is not finite");
}

void ChainConfig::validate(const ObjectiveSpec& obj) const {
    validate();
    if (obj.n_modes() != n_modes)
        throw std::invalid_argument("chain.n_modes = " + std::to_string(n_modes) + " but objective has " +
                                    std::to_string(obj.n_modes()));
    if (minibatch && *minibatch > obj.n_train())
        throw std::invalid_argument("chain.minibatch = " + std::to_string(*minibatch) + " exceeds n_train = " +
                                    std::to_string(obj.n_train()));
}

double ChainConfig::noise_scale() const { return std::sqrt(2.0 * eta / beta); }

SpectralVector ChainConfig::initial_point() const { return x0.n_modes() == 0 ? SpectralVector(n_modes) : x0; }

std::uint64_t default_burn_in(std::uint64_t horizon) { return horizon / 5; }

std::uint64_t checkpoint_cadence(std::uint64_t horizon) { return std::max<std::uint64_t>(1, horizon / 1000); }

ChainState ChainState::initial(const ChainConfig& cfg) {
    ChainState s;
    s.x = cfg.initial_point();
    s.step = 0;
    s.noise = CounterRng(derive_key(cfg.seed, cfg.chain_id, Stream::noise));
    s.minibatch = CounterRng(derive_key(cfg.seed, cfg.chain_id, Stream::minibatch));
    return s;
}

SpectralVector gaussian_modes(std::size_t n_modes, const CounterRng& rng, std::uint64_t step) {
    SpectralVector v(n_modes);
    rng.normals(step, v.coeffs());
    return v;
}

void draw_batch(const CounterRng& rng, std::uint64_t step, std::size_t n, std::size_t m,
                std::vector<std::uint32_t>& scratch, std::vector<std::uint32_t>& out) {
    if (m == 0 || m > n) throw std::invalid_argument("draw_batch: need 1 <= m <= n");
    scratch.resize(n);
    for (std::size_t i = 0; i < n; ++i) scratch[i] = static_cast<std::uint32_t>(i);
    out.resize(m);
    if (m == n) {
        std::copy(scratch.begin(), scratch.end(), out.begin());
        return;
    }
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + rng.below(step, static_cast<std::uint32_t>(i), n - i);
        std::swap(scratch[i], scratch[j]);
        out[i] = scratch[i];
    }
    std::sort(out.begin(), out.end());
}

namespace {

DiagonalOperator make_resolvent(const ChainConfig& cfg, const ObjectiveSpec* obj, ChainMode mode,
                                const KernelSpec& fallback = {}) {
    const KernelSpec spec = obj ? obj->kernel() : fallback;
    if (obj && obj->lambda0() && mode != ChainMode::ou)
        return resolvent_s_eta_prime(spec, *obj->lambda0(), cfg.lambda, cfg.eta, cfg.n_modes);
    return resolvent_s_eta(spec, cfg.lambda, cfg.eta, cfg.n_modes);
}

}  // namespace

Stepper::Stepper(const ChainConfig& cfg, const ObjectiveSpec* obj, ChainMode mode)
    : cfg_(cfg),
      obj_(obj),
      mode_(mode),
      resolvent_(make_resolvent(cfg, obj, mode)),
      sigma_(cfg.noise_scale()),
      batch_size_(0),
      grad_(cfg.n_modes),
      next_(cfg.n_modes),
      xi_(cfg.n_modes) {
    if (mode_ != ChainMode::ou) {
        if (!obj_) throw std::invalid_argument("stepper: gradient chains need an objective");
        cfg_.validate(*obj_);
        batch_size_ = mode_ == ChainMode::sgld ? cfg_.minibatch.value_or(obj_->n_train()) : obj_->n_train();
        batch_.assign(obj_->all_indices().begin(), obj_->all_indices().end());
    } else {
        cfg_.validate();
    }
}

Stepper::Stepper(const ChainConfig& cfg, const KernelSpec& kernel)
    : cfg_(cfg),
      obj_(nullptr),
      mode_(ChainMode::ou),
      resolvent_(make_resolvent(cfg, nullptr, ChainMode::ou, kernel)),
      sigma_(cfg.noise_scale()),
      batch_size_(0),
      grad_(cfg.n_modes),
      next_(cfg.n_modes),
      xi_(cfg.n_modes) {
    cfg_.validate();
}

void Stepper::advance(ChainState& s, const double* xi, double sigma) {
    if (s.x.n_modes() != cfg_.n_modes) throw std::invalid_argument("stepper: state has wrong mode count");
    const auto& k = simd::active();
    const std::size_t n = cfg_.n_modes;
    if (mode_ == ChainMode::ou) {
        std::fill(grad_.coeffs().begin(), grad_.coeffs().end(), 0.0);
    } else {
        if (mode_ == ChainMode::sgld && batch_size_ < obj_->n_train())
            draw_batch(s.minibatch, s.step, obj_->n_train(), batch_size_, scratch_, batch_);
        obj_->batch_grad_into(s.x, batch_, grad_, ws_);
        // The ridge part is handled implicitly by the modified resolvent.
        if (obj_->lambda0()) k.axpy(-*obj_->lambda0(), s.x.data(), grad_.data(), n);
        if (!grad_.all_finite())
            throw NumericalError("non-finite gradient at step " + std::to_string(s.step));
    }
    k.semi_implicit_update(resolvent_.scales().data(), s.x.data(), grad_.data(), xi, cfg_.eta, sigma,
                           next_.data(), n);
    if (!next_.all_finite()) throw NumericalError("non-finite state at step " + std::to_string(s.step + 1));
    std::swap(s.x, next_);
    ++s.step;
}

void Stepper::step(ChainState& s) {
    s.noise.normals(s.step, xi_);
    advance(s, xi_.data(), sigma_);
}

void Stepper::step_with_noise(ChainState& s, std::span<const double> xi) {
    if (xi.size() != cfg_.n_modes) throw std::invalid_argument("stepper: noise has wrong length");
    advance(s, xi.data(), sigma_);
}

void Stepper::step_noiseless(ChainState& s) {
    std::fill(xi_.begin(), xi_.end(), 0.0);
    advance(s, xi_.data(), 0.0);
}

ChainState gld_step(const ChainState& state, const ChainConfig& cfg, const ObjectiveSpec& obj) {
    ChainState next = state;
    Stepper(cfg, &obj, ChainMode::gld).step(next);
    return next;
}

ChainState sgld_step(const ChainState& state, const ChainConfig& cfg, const ObjectiveSpec& obj) {
    ChainState next = state;
    Stepper(cfg, &obj, ChainMode::sgld).step(next);
    return next;
}

ChainState ou_step(const ChainState& state, const ChainConfig& cfg, const KernelSpec& kernel) {
    ChainState next = state;
    Stepper(cfg, kernel).step(next);
    return next;
}

std::vector<double> ou_stationary_variance(const KernelSpec& spec, double lambda, double eta, double beta,
                                           std::size_t n_modes) {
    if (!(lambda > 0.0) || !(eta >= 0.0) || !(beta > 0.0))
        throw std::invalid_argument("ou_stationary_variance: need lambda > 0, eta >= 0, beta > 0");
    std::vector<double> v(n_modes);
    for (std::size_t k = 0; k < n_modes; ++k) {
        const double mu = eigenvalue(spec, k);
        const double a = 1.0 / (1.0 + lambda * eta / mu);
        // (2 eta / beta) a^2 / (1 - a^2) rewritten without the cancellation in 1 - a^2.
        v[k] = 2.0 * a * mu / (beta * lambda * (1.0 + a));
    }
    return v;
}

std::vector<double> coupled_run(const ChainConfig& cfg, const ObjectiveSpec& obj, const SpectralVector& x0a,
                                const SpectralVector& x0b, std::uint64_t horizon) {
    Stepper stepper(cfg, &obj, ChainMode::gld);
    ChainState a = ChainState::initial(cfg);
    ChainState b = a;
    a.x = x0a;
    b.x = x0b;
    std::vector<double> xi(cfg.n_modes);
    std::vector<double> d;
    d.reserve(horizon + 1);
    d.push_back((a.x - b.x).norm());
    for (std::uint64_t n = 0; n < horizon; ++n) {
        a.noise.normals(a.step, xi);
        stepper.step_with_noise(a, xi);
        stepper.step_with_noise(b, xi);
        d.push_back((a.x - b.x).norm());
    }
    return d;
}

void CesaroAccumulator::add(double phi_value, double risk_value, double norm_value) {
    ++count;
    phi_sum += phi_value;
    risk_sum += risk_value;
    norm_sum += norm_value;
}

namespace {
double ratio_or_nan(double sum, std::uint64_t n) {
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}
}  // namespace

double CesaroAccumulator::phi() const { return ratio_or_nan(phi_sum, count); }
double CesaroAccumulator::risk() const { return ratio_or_nan(risk_sum, count); }
double CesaroAccumulator::norm() const { return ratio_or_nan(norm_sum, count); }

double sigmoid_gap(double gap) { return 1.0 / (1.0 + std::exp(-gap)) - 0.5; }

void RunSummary::write_csv(const std::filesystem::path& path) const {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.precision(17);
        out << "step,norm,risk,reg_objective,phi,cesaro_phi\n";
        for (const auto& r : rows) {
            out << r.step << ',' << r.norm << ',' << r.risk << ',' << r.reg_objective << ',' << r.phi << ',';
            if (std::isnan(r.cesaro_phi))
                out << "nan";
            else
                out << r.cesaro_phi;
            out << '\n';
        }
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

RunSummary run_chain(const ChainConfig& cfg, const ObjectiveSpec& obj, ChainMode mode, const RunOptions& opts) {
    cfg.validate(obj);
    Stepper stepper(cfg, &obj, mode);
    RunSummary summary;
    summary.mode = mode;
    summary.seed = cfg.seed;
    summary.chain_id = cfg.chain_id;
    summary.burn_in = cfg.burn_in;
    summary.horizon = cfg.horizon;
    ChainState state = opts.resume ? *opts.resume : ChainState::initial(cfg);
    summary.cesaro = opts.resume ? opts.resume_cesaro : CesaroAccumulator{};
    const std::uint64_t cadence = checkpoint_cadence(cfg.horizon);
    if (opts.record_log) summary.rows.reserve(static_cast<std::size_t>(cfg.horizon / cadence) + 1);
    try {
        while (state.step < cfg.horizon) {
            stepper.step(state);
            const bool retained = state.step > cfg.burn_in;
            const bool logged = opts.record_log && state.step % cadence == 0;
            if (!retained && !logged) continue;
            const double risk = obj.risk(state.x);
            const double norm = state.x.norm();
            const double phi = opts.phi ? opts.phi(state.x) : sigmoid_gap(risk - opts.l_star);
            if (retained) {
                summary.cesaro.add(phi, risk, norm);
                for (const auto& o : opts.observers) o(state);
            }
            if (logged) {
                const double hk = rkhs_norm(state.x, obj.kernel());
                summary.rows.push_back({state.step, norm, risk, risk + 0.5 * cfg.lambda * hk * hk, phi,
                                        summary.cesaro.phi()});
            }
        }
    } catch (const NumericalError& e) {
        summary.aborted = true;
        summary.abort_reason = e.what();
    } catch (const std::overflow_error& e) {
        summary.aborted = true;
        summary.abort_reason = e.what();
    }
    summary.final_state = std::move(state);
    return summary;
}

namespace {

constexpr char kMagic[5] = {'R', 'K', 'L', 'D', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void put_le(std::ostream& out, T value) {
    std::uint64_t bits = 0;
    if constexpr (std::is_same_v<T, double>) {
        static_assert(sizeof(double) == 8);
        std::memcpy(&bits, &value, 8);
    } else {
        bits = static_cast<std::uint64_t>(value);
    }
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    if constexpr (std::is_same_v<T, double>) {
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    } else {
        return static_cast<T>(bits);
    }
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
        out.write(kMagic, sizeof kMagic);
        put_le<std::uint32_t>(out, kCheckpointVersion);
        put_le<std::uint64_t>(out, cp.state.x.n_modes());
        put_le<std::uint64_t>(out, cp.state.step);
        put_le<std::uint64_t>(out, cp.state.noise.key());
        put_le<std::uint64_t>(out, cp.state.minibatch.key());
        for (std::size_t k = 0; k < cp.state.x.n_modes(); ++k) put_le<double>(out, cp.state.x[k]);
        put_le<std::uint64_t>(out, cp.cesaro.count);
        put_le<double>(out, cp.cesaro.phi_sum);
        put_le<double>(out, cp.cesaro.risk_sum);
        put_le<double>(out, cp.cesaro.norm_sum);
        if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[sizeof kMagic];
    if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kMagic))
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    const auto version = get_le<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint cp;
    const auto n = get_le<std::uint64_t>(in);
    if (n == 0 || n > (std::uint64_t{1} << 32)) throw std::runtime_error("checkpoint: implausible mode count");
    cp.state.step = get_le<std::uint64_t>(in);
    cp.state.noise = CounterRng(get_le<std::uint64_t>(in));
    cp.state.minibatch = CounterRng(get_le<std::uint64_t>(in));
    std::vector<double> c(n);
    for (auto& v : c) v = get_le<double>(in);
    cp.state.x = SpectralVector(std::move(c));
    cp.cesaro.count = get_le<std::uint64_t>(in);
    cp.cesaro.phi_sum = get_le<double>(in);
    cp.cesaro.risk_sum = get_le<double>(in);
    cp.cesaro.norm_sum = get_le<double>(in);
    if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("checkpoint: trailing bytes");
    return cp;
}

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace rkld
