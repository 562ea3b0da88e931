#include "rkld/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rkld/simd.hpp"
#include "rkld/stats.hpp"

namespace rkld {

double sigmoid_statistic(const ObjectiveSpec& obj, const SpectralVector& x, double l_star) {
    return sigmoid_gap(obj.risk(x) - l_star);
}

double norm_ratio(const SpectralVector& x) {
    const double s = x.norm_squared();
    return s / (1.0 + s);
}

std::string_view to_string(TestFunctionKind kind) {
    switch (kind) {
        case TestFunctionKind::sigmoid_gap:
            return "sigmoid_gap";
        case TestFunctionKind::norm_ratio:
            return "norm_ratio";
        case TestFunctionKind::constant:
            return "constant";
    }
    return "?";
}

TestFunctionKind parse_test_function(std::string_view text) {
    if (text == "sigmoid_gap") return TestFunctionKind::sigmoid_gap;
    if (text == "norm_ratio") return TestFunctionKind::norm_ratio;
    if (text == "constant") return TestFunctionKind::constant;
    throw std::invalid_argument("unknown test function '" + std::string(text) + "'");
}

TestFunction make_test_function(TestFunctionKind kind, const ObjectiveSpec& obj, double l_star) {
    switch (kind) {
        case TestFunctionKind::sigmoid_gap:
            return [&obj, l_star](const SpectralVector& x) { return sigmoid_statistic(obj, x, l_star); };
        case TestFunctionKind::norm_ratio:
            return norm_ratio;
        case TestFunctionKind::constant:
            return [](const SpectralVector&) { return 0.25; };
    }
    throw std::invalid_argument("make_test_function: bad kind");
}

double spectral_gap_strict(double lambda, double mu0, double M, double eta) {
    if (!(lambda > M * mu0)) throw RegimeError("strict spectral gap needs lambda > M mu0");
    if (!(eta >= 0.0)) throw std::invalid_argument("spectral gap: eta must be nonnegative");
    return (lambda / mu0 - M) / (1.0 + eta * lambda / mu0);
}

double spectral_gap_bounded(double lambda, double mu0, double eta, double b, double delta) {
    if (!(lambda > 0.0) || !(mu0 > 0.0)) throw std::invalid_argument("spectral gap: lambda, mu0 must be positive");
    if (!(eta >= 0.0)) throw std::invalid_argument("spectral gap: eta must be nonnegative");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("spectral gap: delta must lie in (0, 1)");
    if (!(b >= 0.0)) throw std::invalid_argument("spectral gap: b must be nonnegative");
    const double r = eta == 0.0 ? std::exp(-lambda / mu0) : std::exp(-std::log1p(lambda * eta / mu0) / eta);
    const double bbar = std::max(b, 1.0);
    const double kappa = bbar + 1.0;
    const double vbar = 4.0 * bbar / (std::sqrt((1.0 + r) / 2.0) - r);
    return std::min(lambda / (2.0 * mu0), 0.5) * delta / (4.0 * std::log(kappa * (vbar + 1.0) / (1.0 - delta)));
}

double spectral_gap(Regime regime, double lambda, double mu0, double M, double eta, double /*beta*/,
                    const GapExtra& extra) {
    if (regime == Regime::strict) return spectral_gap_strict(lambda, mu0, M, eta);
    return spectral_gap_bounded(lambda, mu0, eta, extra.b, extra.delta);
}

double k1_bound(const KernelSpec& spec, double lambda, double eta, double beta, std::size_t n_modes) {
    const auto v = ou_stationary_variance(spec, lambda, eta, beta, n_modes);
    return std::sqrt(std::accumulate(v.begin(), v.end(), 0.0));
}

LyapunovConstants lyapunov_constants(Regime regime, double eta, double lambda, double mu0, double M,
                                     std::optional<double> B, std::optional<double> x_star_norm, double k1) {
    if (regime == Regime::strict) {
        if (!x_star_norm) throw std::invalid_argument("lyapunov constants: strict regime needs ||x*||");
        return {(1.0 + eta * M) / (1.0 + lambda * eta / mu0), *x_star_norm + 2.0 * k1};
    }
    if (!B) throw std::invalid_argument("lyapunov constants: bounded regime needs a gradient bound");
    return {1.0 / (1.0 + lambda * eta / mu0), mu0 * *B / lambda + k1};
}

double gibbs_concentration_bound(double M, double lambda, double beta, double x_tilde_hk) {
    if (!(M > 0.0) || !(lambda > 0.0) || !(beta > 0.0) || !(x_tilde_hk >= 0.0))
        throw std::invalid_argument("gibbs bound: need M, lambda, beta > 0 and ||x~|| >= 0");
    return (std::sqrt(2.0 * M / lambda) + 1.0) / beta + lambda * (x_tilde_hk / std::sqrt(beta) + x_tilde_hk * x_tilde_hk);
}

double minibatch_discrepancy_rate(std::uint64_t n, double beta, double eta, std::size_t n_train, std::size_t m) {
    if (m == 0 || m > n_train) throw std::invalid_argument("r_n: need 1 <= m <= n_train");
    if (m == n_train) return 0.0;
    return static_cast<double>(n) * beta * eta * static_cast<double>(n_train - m) /
           (static_cast<double>(m) * static_cast<double>(n_train - 1));
}

TheoryConstants theory_constants(const ObjectiveSpec& obj, const TheoryInputs& in) {
    TheoryConstants tc;
    const double mu0 = obj.kernel().mu0;
    tc.regime = detect_regime(obj, in.lambda);
    tc.M = smoothness_constant(obj);
    tc.B = gradient_bound(obj);
    if (tc.regime == Regime::strict && !in.x_star_norm)
        throw std::invalid_argument("theory constants: strict regime needs ||x*||");
    const Dissipativity d = dissipativity_constants(obj, in.lambda, in.x_star_norm.value_or(0.0));
    tc.m = d.m;
    tc.c = d.c;
    tc.k1 = k1_bound(obj.kernel(), in.lambda, in.eta, in.beta, obj.n_modes());
    const auto lc = lyapunov_constants(tc.regime, in.eta, in.lambda, mu0, tc.M, tc.B, in.x_star_norm, tc.k1);
    tc.rho = lc.rho;
    tc.b = lc.b;
    if (tc.regime == Regime::strict) {
        tc.gap_eta = spectral_gap_strict(in.lambda, mu0, tc.M, in.eta);
        tc.gap_0 = spectral_gap_strict(in.lambda, mu0, tc.M, 0.0);
        tc.c_beta = 1.0;
    } else {
        const double k1_0 = k1_bound(obj.kernel(), in.lambda, 0.0, in.beta, obj.n_modes());
        const auto lc0 = lyapunov_constants(tc.regime, 0.0, in.lambda, mu0, tc.M, tc.B, in.x_star_norm, k1_0);
        tc.gap_eta = spectral_gap_bounded(in.lambda, mu0, in.eta, tc.b, in.delta);
        tc.gap_0 = spectral_gap_bounded(in.lambda, mu0, 0.0, lc0.b, in.delta);
        tc.gap_certified = false;
        tc.c_beta = std::sqrt(in.beta);
    }
    tc.gibbs_bound = gibbs_concentration_bound(tc.M, in.lambda, in.beta, in.x_tilde_hk);
    tc.r_n = minibatch_discrepancy_rate(in.n_steps, in.beta, in.eta, obj.n_train(),
                                        in.minibatch.value_or(obj.n_train()));
    return tc;
}

TailTerms theorem_rhs(const TheoryConstants& tc, double eta, std::uint64_t n, double delta, double kappa,
                      double optimization_gap) {
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("theorem rhs: delta must lie in (0, 1)");
    TailTerms t;
    t.optimization = optimization_gap;
    t.ergodic = std::exp(-tc.gap_eta * (eta * static_cast<double>(n) - 1.0));
    t.discretization = tc.c_beta / tc.gap_0 * std::pow(eta, 0.5 - kappa);
    t.gibbs = tc.gibbs_bound;
    t.rhs = 5.0 / delta * (t.optimization + t.ergodic + t.discretization + t.gibbs);
    return t;
}

RateFit fit_rate(std::vector<double> x, std::vector<double> y, std::vector<double> se) {
    RateFit fit;
    const std::size_t n = x.size();
    if (y.size() != n || se.size() != n) throw std::invalid_argument("fit_rate: length mismatch");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    for (std::size_t i : order) {
        fit.abscissae.push_back(x[i]);
        fit.ordinates.push_back(y[i]);
        fit.errors.push_back(se[i]);
    }
    std::ostringstream note;
    if (n < 4) {
        fit.inconclusive = true;
        note << "fewer than 4 points; ";
    }
    std::vector<double> lx, ly, ls;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(fit.ordinates[i] > 0.0) || !(fit.abscissae[i] > 0.0)) {
            fit.inconclusive = true;
            note << "nonpositive value at point " << i << "; ";
            continue;
        }
        lx.push_back(std::log(fit.abscissae[i]));
        ly.push_back(std::log(fit.ordinates[i]));
        ls.push_back(fit.errors[i] / fit.ordinates[i]);
    }
    double min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < n; ++i) min_gap = std::min(min_gap, std::abs(fit.ordinates[i] - fit.ordinates[i - 1]));
    const double max_se = n ? *std::max_element(fit.errors.begin(), fit.errors.end()) : 0.0;
    if (n >= 2 && max_se > 0.5 * min_gap) {
        fit.inconclusive = true;
        note << "MC error " << max_se << " exceeds half the smallest gap " << min_gap << "; ";
    }
    if (lx.size() >= 2) {
        const bool weighted = std::all_of(ls.begin(), ls.end(), [](double s) { return s > 0.0; });
        const stats::LineFit lf = weighted ? stats::wls(lx, ly, ls) : stats::ols(lx, ly);
        fit.slope = lf.slope;
        fit.slope_se = lf.slope_se;
        fit.ci_low = lf.slope - 1.96 * lf.slope_se;
        fit.ci_high = lf.slope + 1.96 * lf.slope_se;
    }
    fit.note = note.str();
    return fit;
}

namespace {

// Per-chain retained-step sums split into time batches.
struct BatchedMean {
    std::vector<double> sums;
    std::vector<std::uint64_t> counts;

    explicit BatchedMean(std::size_t batches) : sums(batches, 0.0), counts(batches, 0) {}
    void add(std::size_t b, double v) {
        sums[b] += v;
        ++counts[b];
    }
    double batch(std::size_t b) const { return sums[b] / static_cast<double>(counts[b]); }
    double mean() const {
        return std::accumulate(sums.begin(), sums.end(), 0.0) /
               static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}));
    }
};

// Paired error of a against the reference r over aligned batches.
std::pair<double, double> paired_error(const BatchedMean& a, const BatchedMean& r) {
    stats::Moments d;
    for (std::size_t b = 0; b < a.sums.size(); ++b) d.add(a.batch(b) - r.batch(b));
    return {std::abs(a.mean() - r.mean()), d.standard_error()};
}

// Smallest q (<= 1e6) making every value an integer multiple of 1/q.
std::uint64_t common_grid(const std::vector<double>& values) {
    for (std::uint64_t q = 1; q <= 1000000; ++q) {
        bool ok = true;
        for (double v : values) {
            const double t = v * static_cast<double>(q);
            if (std::abs(t - std::round(t)) > 1e-6 || std::round(t) < 1.0) {
                ok = false;
                break;
            }
        }
        if (ok) return q;
    }
    throw std::invalid_argument("weak_error_vs_eta: step sizes share no fine grid of spacing >= 1e-6");
}

ChainConfig experiment_chain(const ExperimentOptions& opts, double eta, std::size_t n_modes, std::uint64_t steps) {
    ChainConfig cfg;
    cfg.eta = eta;
    cfg.beta = opts.beta;
    cfg.lambda = opts.lambda;
    cfg.n_modes = n_modes;
    cfg.seed = opts.seed;
    cfg.horizon = std::max<std::uint64_t>(steps, 2);
    cfg.burn_in = 0;
    return cfg;
}

void check_experiment(const ExperimentOptions& opts) {
    if (!(opts.time_horizon > 0.0)) throw std::invalid_argument("experiment: time horizon must be positive");
    if (!(opts.burn_fraction >= 0.0 && opts.burn_fraction < 1.0))
        throw std::invalid_argument("experiment: burn fraction must lie in [0, 1)");
    if (opts.batches < 2) throw std::invalid_argument("experiment: need at least two batches");
}

}  // namespace

WeakErrorResult weak_error_vs_eta(const ObjectiveSpec& obj, const std::vector<double>& etas, double eta_ref,
                                  const ExperimentOptions& opts) {
    check_experiment(opts);
    if (etas.empty()) throw std::invalid_argument("weak_error_vs_eta: empty eta list");
    if (eta_ref > *std::min_element(etas.begin(), etas.end()) / 8.0 * (1.0 + 1e-12))
        throw std::invalid_argument("weak_error_vs_eta: eta_ref must be <= min(eta) / 8");
    std::vector<double> all = etas;
    all.push_back(eta_ref);
    const std::uint64_t q = common_grid(all);
    const double fine = 1.0 / static_cast<double>(q);
    const std::size_t n_chains = all.size();
    const std::size_t n = obj.n_modes();
    const std::uint64_t fine_steps = static_cast<std::uint64_t>(std::llround(opts.time_horizon * static_cast<double>(q)));
    const double burn_time = opts.burn_fraction * opts.time_horizon;
    const double window = (opts.time_horizon - burn_time) / static_cast<double>(opts.batches);
    const TestFunction phi = make_test_function(opts.test_function, obj, opts.l_star);

    std::vector<std::uint64_t> sub(n_chains);
    std::vector<ChainConfig> cfgs;
    std::vector<Stepper> steppers;
    std::vector<ChainState> states;
    std::vector<std::vector<double>> acc(n_chains, std::vector<double>(n, 0.0));
    std::vector<BatchedMean> means(n_chains, BatchedMean(opts.batches));
    cfgs.reserve(n_chains);
    steppers.reserve(n_chains);
    for (std::size_t c = 0; c < n_chains; ++c) {
        sub[c] = static_cast<std::uint64_t>(std::llround(all[c] * static_cast<double>(q)));
        cfgs.push_back(experiment_chain(opts, all[c], n, fine_steps / sub[c]));
        steppers.emplace_back(cfgs.back(), &obj, ChainMode::gld);
        states.push_back(ChainState::initial(cfgs.back()));
    }
    const CounterRng brownian(derive_key(opts.seed, 0, Stream::noise));
    const auto& kern = simd::active();
    std::vector<double> w(n);
    std::vector<double> xi(n);
    for (std::uint64_t j = 0; j < fine_steps; ++j) {
        brownian.normals(j, w);
        for (std::size_t c = 0; c < n_chains; ++c) {
            kern.axpy(1.0, w.data(), acc[c].data(), n);
            if ((j + 1) % sub[c] != 0) continue;
            const double scale = 1.0 / std::sqrt(static_cast<double>(sub[c]));
            for (std::size_t k = 0; k < n; ++k) xi[k] = acc[c][k] * scale;
            std::fill(acc[c].begin(), acc[c].end(), 0.0);
            steppers[c].step_with_noise(states[c], xi);
            const double t = static_cast<double>(j + 1) * fine;
            if (t <= burn_time + 1e-12) continue;
            const auto b = std::min<std::size_t>(opts.batches - 1, static_cast<std::size_t>((t - burn_time) / window));
            means[c].add(b, phi(states[c].x));
        }
    }
    WeakErrorResult res;
    res.fine_step = fine;
    const BatchedMean& ref = means.back();
    res.reference = ref.mean();
    std::vector<double> xs, ys, ss;
    for (std::size_t c = 0; c + 1 < n_chains; ++c) {
        const auto [err, se] = paired_error(means[c], ref);
        res.points.push_back({all[c], cfgs[c].horizon, means[c].mean(), err, se});
        xs.push_back(all[c]);
        ys.push_back(err);
        ss.push_back(se);
    }
    res.fit = fit_rate(xs, ys, ss);
    return res;
}

GalerkinResult galerkin_error_vs_n(const Dataset& data, LossKind loss, const KernelSpec& kernel,
                                   std::optional<double> lambda0, const std::vector<std::size_t>& n_list,
                                   std::size_t n_ref, double eta, double kappa, const ExperimentOptions& opts) {
    check_experiment(opts);
    if (n_list.empty()) throw std::invalid_argument("galerkin_error_vs_n: empty N list");
    if (n_ref < 4 * *std::max_element(n_list.begin(), n_list.end()))
        throw std::invalid_argument("galerkin_error_vs_n: N_ref must be >= 4 max(N list)");
    std::vector<std::size_t> all = n_list;
    all.push_back(n_ref);
    const std::size_t n_chains = all.size();
    const std::uint64_t steps = static_cast<std::uint64_t>(std::llround(opts.time_horizon / eta));
    const std::uint64_t burn = static_cast<std::uint64_t>(opts.burn_fraction * static_cast<double>(steps));
    const std::uint64_t window = std::max<std::uint64_t>(1, (steps - burn) / opts.batches);

    std::vector<ObjectiveSpec> objs;
    std::vector<TestFunction> phis;
    std::vector<Stepper> steppers;
    std::vector<ChainState> states;
    std::vector<BatchedMean> means(n_chains, BatchedMean(opts.batches));
    objs.reserve(n_chains);
    steppers.reserve(n_chains);
    for (std::size_t c = 0; c < n_chains; ++c) objs.emplace_back(data, loss, kernel, all[c] + 1, lambda0);
    for (std::size_t c = 0; c < n_chains; ++c) {
        const ChainConfig cfg = experiment_chain(opts, eta, all[c] + 1, steps);
        steppers.emplace_back(cfg, &objs[c], ChainMode::gld);
        states.push_back(ChainState::initial(cfg));
        phis.push_back(make_test_function(opts.test_function, objs[c], opts.l_star));
    }
    const CounterRng noise(derive_key(opts.seed, 0, Stream::noise));
    std::vector<double> w(n_ref + 1);
    for (std::uint64_t j = 0; j < steps; ++j) {
        noise.normals(j, w);
        for (std::size_t c = 0; c < n_chains; ++c) {
            steppers[c].step_with_noise(states[c], std::span<const double>(w.data(), all[c] + 1));
            if (j + 1 <= burn) continue;
            const auto b = std::min<std::size_t>(opts.batches - 1, static_cast<std::size_t>((j - burn) / window));
            means[c].add(b, phis[c](states[c].x));
        }
    }
    GalerkinResult res;
    const BatchedMean& ref = means.back();
    res.reference = ref.mean();
    std::vector<double> xs, ys, ss;
    for (std::size_t c = 0; c + 1 < n_chains; ++c) {
        const auto [err, se] = paired_error(means[c], ref);
        const double abscissa = std::pow(eigenvalue(kernel, all[c] + 1), 0.5 - kappa);
        res.points.push_back({all[c], abscissa, means[c].mean(), err, se});
        xs.push_back(abscissa);
        ys.push_back(err);
        ss.push_back(se);
    }
    res.fit = fit_rate(xs, ys, ss);
    return res;
}

DecayEstimate ergodicity_decay_estimate(const ChainConfig& cfg, const ObjectiveSpec& obj, const TestFunction& phi,
                                        std::size_t replicas, std::size_t stride, std::uint64_t reference_horizon,
                                        std::size_t threads) {
    cfg.validate(obj);
    if (replicas < 2 || stride == 0) throw std::invalid_argument("ergodicity decay: need replicas >= 2, stride >= 1");
    const std::size_t n_points = static_cast<std::size_t>(cfg.horizon / stride);
    std::vector<std::vector<double>> values(replicas, std::vector<double>(n_points));
    parallel_for(replicas, threads, [&](std::size_t r) {
        ChainConfig c = cfg;
        c.chain_id = r;
        Stepper st(c, &obj, ChainMode::gld);
        ChainState s = ChainState::initial(c);
        for (std::size_t p = 0; p < n_points; ++p) {
            for (std::size_t i = 0; i < stride; ++i) st.step(s);
            values[r][p] = phi(s.x);
        }
    });
    // Reference: long single run, Cesaro tail after 20% burn-in.
    ChainConfig rc = cfg;
    rc.chain_id = replicas + 1;
    rc.horizon = reference_horizon;
    rc.burn_in = default_burn_in(reference_horizon);
    Stepper st(rc, &obj, ChainMode::gld);
    ChainState s = ChainState::initial(rc);
    std::vector<double> tail;
    tail.reserve(reference_horizon - rc.burn_in);
    while (s.step < rc.horizon) {
        st.step(s);
        if (s.step > rc.burn_in) tail.push_back(phi(s.x));
    }
    const stats::Estimate ref = stats::batch_means(tail, 20);

    DecayEstimate out;
    out.reference = ref.mean;
    bool all_equal = ref.standard_error == 0.0;
    std::vector<double> lx, ly, ls;
    bool in_window = true;
    for (std::size_t p = 0; p < n_points; ++p) {
        stats::Moments m;
        for (std::size_t r = 0; r < replicas; ++r) {
            m.add(values[r][p]);
            all_equal = all_equal && values[r][p] == ref.mean;
        }
        const double t = cfg.eta * static_cast<double>((p + 1) * stride);
        const double gap = m.mean() - ref.mean;
        const double se = std::hypot(m.standard_error(), ref.standard_error);
        out.times.push_back(t);
        out.gaps.push_back(gap);
        if (in_window && se > 0.0 && std::abs(gap) > 3.0 * se) {
            lx.push_back(t);
            ly.push_back(std::log(std::abs(gap)));
            ls.push_back(se / std::abs(gap));
        } else {
            in_window = false;
        }
    }
    if (all_equal) {
        out.skipped = true;
        return out;
    }
    out.fit_points = lx.size();
    if (lx.size() < 4) {
        out.inconclusive = true;
        return out;
    }
    const stats::LineFit lf = stats::wls(lx, ly, ls);
    out.rate = -lf.slope;
    out.rate_se = lf.slope_se;
    return out;
}

GibbsGap gibbs_gap_empirical(const ChainConfig& cfg, const ObjectiveSpec& obj, double l_tilde, std::size_t replicas,
                             std::size_t threads) {
    cfg.validate(obj);
    if (replicas == 0) throw std::invalid_argument("gibbs gap: need at least one replica");
    constexpr std::size_t kBatches = 20;
    const std::uint64_t retained = cfg.horizon - cfg.burn_in;
    if (retained < kBatches) throw std::invalid_argument("gibbs gap: too few retained steps");
    const std::uint64_t per = retained / kBatches;
    std::vector<std::vector<double>> batch(replicas, std::vector<double>(kBatches, 0.0));
    parallel_for(replicas, threads, [&](std::size_t r) {
        ChainConfig c = cfg;
        c.chain_id = cfg.chain_id + r;
        Stepper st(c, &obj, ChainMode::gld);
        ChainState s = ChainState::initial(c);
        while (s.step < cfg.burn_in) st.step(s);
        for (std::size_t b = 0; b < kBatches; ++b) {
            double sum = 0.0;
            for (std::uint64_t i = 0; i < per; ++i) {
                st.step(s);
                sum += obj.risk(s.x);
            }
            batch[r][b] = sum / static_cast<double>(per);
        }
    });
    GibbsGap g;
    g.replicas = replicas;
    stats::Moments whole, first, second, diff;
    for (std::size_t r = 0; r < replicas; ++r) {
        double f = 0.0, sc = 0.0;
        for (std::size_t b = 0; b < kBatches; ++b) (b < kBatches / 2 ? f : sc) += batch[r][b];
        f /= kBatches / 2;
        sc /= kBatches / 2;
        whole.add(0.5 * (f + sc));
        first.add(f);
        second.add(sc);
        diff.add(f - sc);
    }
    g.gap = whole.mean() - l_tilde;
    g.first_half = first.mean() - l_tilde;
    g.second_half = second.mean() - l_tilde;
    if (replicas >= 2) {
        g.se = whole.standard_error();
        g.half_se = diff.standard_error();
    } else {
        // One chain: batch means within the run.
        stats::Moments bf, bs;
        for (std::size_t b = 0; b < kBatches; ++b) (b < kBatches / 2 ? bf : bs).add(batch[0][b]);
        stats::Moments all;
        all.merge(bf);
        all.merge(bs);
        g.se = all.standard_error();
        g.half_se = std::hypot(bf.standard_error(), bs.standard_error());
    }
    g.stationary = std::abs(g.first_half - g.second_half) <= 3.0 * g.half_se;
    return g;
}

GaussianGap gaussian_gibbs_gap(const ObjectiveSpec& obj, double lambda, double eta, double beta) {
    if (obj.loss().kind != LossKind::squared)
        throw std::invalid_argument("gaussian_gibbs_gap: needs the squared loss (constant Hessian)");
    const std::size_t n = obj.n_modes();
    const Eigen::Index d = static_cast<Eigen::Index>(n);
    const Eigen::MatrixXd h = obj.hessian(SpectralVector(n));
    const double lambda0 = obj.lambda0().value_or(0.0);
    Eigen::VectorXd s(d), inv_mu(d);
    for (Eigen::Index k = 0; k < d; ++k) {
        const double mu = eigenvalue(obj.kernel(), static_cast<std::size_t>(k));
        inv_mu(k) = 1.0 / mu;
        s(k) = 1.0 / (1.0 + eta * (lambda0 + lambda / mu));
    }
    Eigen::MatrixXd htilde = h;
    htilde.diagonal().array() -= lambda0;
    Eigen::MatrixXd a = s.asDiagonal() * (Eigen::MatrixXd::Identity(d, d) - eta * htilde);
    Eigen::MatrixXd sigma = (2.0 * eta / beta) * s.cwiseProduct(s).asDiagonal().toDenseMatrix();
    for (int it = 0; it < 200; ++it) {
        const Eigen::MatrixXd inc = a * sigma * a.transpose();
        sigma += inc;
        a = a * a;
        if (inc.norm() <= 1e-17 * sigma.norm()) break;
        if (!sigma.allFinite() || it == 199)
            throw ConvergenceError("gaussian_gibbs_gap: chain is not mean-square stable at this eta");
    }
    GaussianGap g;
    g.discrete = 0.5 * (h * sigma).trace();
    Eigen::MatrixXd q = h;
    q.diagonal() += lambda * inv_mu;
    g.continuous = 0.5 * (h * q.llt().solve(Eigen::MatrixXd::Identity(d, d))).trace() / beta;
    return g;
}

std::vector<DiscrepancyPoint> sgld_discrepancy(const ChainConfig& cfg, const ObjectiveSpec& obj,
                                               const TestFunction& phi, std::uint64_t horizon,
                                               const std::vector<std::size_t>& m_list, std::size_t replicas,
                                               std::size_t threads) {
    cfg.validate(obj);
    if (replicas < 2) throw std::invalid_argument("sgld discrepancy: need at least two replicas");
    const std::size_t nm = m_list.size();
    std::vector<std::vector<double>> diff(nm, std::vector<double>(replicas));
    parallel_for(replicas, threads, [&](std::size_t r) {
        ChainConfig c = cfg;
        c.chain_id = cfg.chain_id + r;
        c.horizon = std::max<std::uint64_t>(horizon, 1);
        c.burn_in = 0;
        c.minibatch.reset();
        Stepper gld(c, &obj, ChainMode::gld);
        ChainState x = ChainState::initial(c);
        for (std::uint64_t i = 0; i < horizon; ++i) gld.step(x);
        const double px = phi(x.x);
        for (std::size_t j = 0; j < nm; ++j) {
            ChainConfig cs = c;
            cs.minibatch = m_list[j];
            Stepper sg(cs, &obj, ChainMode::sgld);
            ChainState y = ChainState::initial(cs);
            for (std::uint64_t i = 0; i < horizon; ++i) sg.step(y);
            diff[j][r] = px - phi(y.x);
        }
    });
    std::vector<DiscrepancyPoint> out;
    for (std::size_t j = 0; j < nm; ++j) {
        stats::Moments m;
        for (double v : diff[j]) m.add(v);
        DiscrepancyPoint p;
        p.m = m_list[j];
        p.r_n = minibatch_discrepancy_rate(horizon, cfg.beta, cfg.eta, obj.n_train(), m_list[j]);
        p.discrepancy = std::abs(m.mean());
        p.se = m.standard_error();
        p.c_fit = p.r_n > 0.0 ? p.discrepancy / (std::sqrt(p.r_n) + std::pow(p.r_n, 0.25)) : 0.0;
        out.push_back(p);
    }
    return out;
}

std::vector<TailPoint> theorem_tail_bound(const ChainConfig& cfg, const ObjectiveSpec& obj, double delta,
                                          double l_star, const TheoryConstants& tc, double kappa,
                                          double optimization_gap, const std::vector<std::uint64_t>& checkpoints,
                                          std::size_t replicas, std::size_t threads) {
    cfg.validate(obj);
    if (checkpoints.empty() || !std::is_sorted(checkpoints.begin(), checkpoints.end()))
        throw std::invalid_argument("tail bound: checkpoints must be nonempty and sorted");
    if (cfg.initial_point().norm() > 1.0) throw std::invalid_argument("tail bound: needs ||x0|| <= 1");
    const std::size_t nc = checkpoints.size();
    std::vector<std::vector<char>> hit(replicas, std::vector<char>(nc, 0));
    parallel_for(replicas, threads, [&](std::size_t r) {
        ChainConfig c = cfg;
        c.chain_id = cfg.chain_id + r;
        Stepper st(c, &obj, ChainMode::gld);
        ChainState s = ChainState::initial(c);
        for (std::size_t j = 0; j < nc; ++j) {
            while (s.step < checkpoints[j]) st.step(s);
            hit[r][j] = obj.risk(s.x) - l_star > delta;
        }
    });
    std::vector<TailPoint> out;
    for (std::size_t j = 0; j < nc; ++j) {
        std::size_t count = 0;
        for (std::size_t r = 0; r < replicas; ++r) count += hit[r][j] ? 1 : 0;
        TailPoint p;
        p.n = checkpoints[j];
        p.probability = static_cast<double>(count) / static_cast<double>(replicas);
        p.se = stats::binomial_se(p.probability, replicas);
        p.terms = theorem_rhs(tc, cfg.eta, checkpoints[j], delta, kappa, optimization_gap);
        out.push_back(p);
    }
    return out;
}

std::vector<DriftPoint> lyapunov_drift(const ChainConfig& cfg, const ObjectiveSpec& obj,
                                       const LyapunovConstants& lc, const std::vector<std::uint64_t>& checkpoints,
                                       std::size_t replicas, std::size_t threads) {
    cfg.validate(obj);
    if (checkpoints.empty() || !std::is_sorted(checkpoints.begin(), checkpoints.end()))
        throw std::invalid_argument("lyapunov drift: checkpoints must be nonempty and sorted");
    const std::size_t nc = checkpoints.size();
    std::vector<std::vector<double>> norms(replicas, std::vector<double>(nc));
    parallel_for(replicas, threads, [&](std::size_t r) {
        ChainConfig c = cfg;
        c.chain_id = cfg.chain_id + r;
        Stepper st(c, &obj, ChainMode::gld);
        ChainState s = ChainState::initial(c);
        for (std::size_t j = 0; j < nc; ++j) {
            while (s.step < checkpoints[j]) st.step(s);
            norms[r][j] = s.x.norm();
        }
    });
    const double x0 = cfg.initial_point().norm();
    std::vector<DriftPoint> out;
    for (std::size_t j = 0; j < nc; ++j) {
        stats::Moments m;
        for (std::size_t r = 0; r < replicas; ++r) m.add(norms[r][j]);
        out.push_back({checkpoints[j], m.mean(), m.standard_error(),
                       std::pow(lc.rho, static_cast<double>(checkpoints[j])) * x0 + lc.b});
    }
    return out;
}

std::vector<AssumptionCheck> check_assumptions(const ObjectiveSpec& obj, double lambda, std::uint64_t seed) {
    std::vector<AssumptionCheck> out;
    const KernelSpec& ks = obj.kernel();
    {
        const std::size_t n = std::max<std::size_t>(obj.n_modes(), 16);
        std::vector<double> lx, ly;
        for (std::size_t k = 0; k < n; ++k) {
            lx.push_back(std::log(static_cast<double>(k + 1)));
            ly.push_back(std::log(eigenvalue(ks, k)));
        }
        const double slope = stats::ols(lx, ly).slope;
        std::ostringstream d;
        d << "fitted eigenvalue exponent " << -slope << " (need 2 +- 0.1)";
        out.push_back({"eigenvalue_decay", std::abs(slope + 2.0) <= 0.1, d.str()});
    }
    {
        const double M = smoothness_constant(obj);
        const CounterRng rng(derive_key(seed, 0, Stream::init));
        double worst = 0.0;
        for (std::uint64_t t = 0; t < 20; ++t) {
            SpectralVector x = gaussian_modes(obj.n_modes(), rng, 2 * t);
            SpectralVector y = gaussian_modes(obj.n_modes(), rng, 2 * t + 1);
            x *= 2.0;
            const double dist = (x - y).norm();
            if (dist == 0.0) continue;
            worst = std::max(worst, (obj.grad(x) - obj.grad(y)).norm() / dist);
        }
        std::ostringstream d;
        d << "max sampled gradient difference quotient " << worst << " vs M = " << M;
        out.push_back({"gradient_lipschitz", worst <= M * (1.0 + 1e-9), d.str()});
    }
    {
        const double alpha = (ks.gamma - 1.0) / 2.0 + 0.25;
        std::ostringstream d;
        d << "gamma = " << ks.gamma << ", alpha = " << alpha << " (need gamma in (1, 2.5))";
        out.push_back({"kernel_smoothness", ks.gamma > 1.0 && ks.gamma < 2.5, d.str()});
    }
    {
        const LossFamily& lf = obj.loss();
        double worst2 = 0.0, worst1 = 0.0;
        for (const auto& p : obj.dataset().points()) {
            for (int i = -400; i <= 400; ++i) {
                const double u = 0.05 * i;
                worst2 = std::max(worst2, std::abs(lf.d2(u, p.y)));
                worst1 = std::max(worst1, std::abs(lf.d1(u, p.y)));
            }
        }
        bool ok = worst2 <= lf.second_derivative_bound * (1.0 + 1e-12) + 1e-15;
        if (lf.first_derivative_bound) ok = ok && worst1 <= *lf.first_derivative_bound * (1.0 + 1e-12) + 1e-15;
        std::ostringstream d;
        d << "loss '" << to_string(lf.kind) << "': sup|l''| on grid " << worst2 << " <= G = "
          << lf.second_derivative_bound;
        if (lf.first_derivative_bound) d << ", sup|l'| " << worst1 << " <= " << *lf.first_derivative_bound;
        out.push_back({"loss_regularity", ok, d.str()});
    }
    std::optional<Regime> regime;
    try {
        regime = detect_regime(obj, lambda);
        out.push_back({"dissipativity", true, "regime " + std::string(to_string(*regime))});
    } catch (const RegimeError& e) {
        out.push_back({"dissipativity", false, e.what()});
    }
    {
        const auto B = gradient_bound(obj);
        std::ostringstream d;
        if (B)
            d << "B = " << *B;
        else
            d << "no uniform gradient bound" << (regime == Regime::strict ? "; not needed in the strict regime" : "");
        out.push_back({"bounded_gradient", B.has_value() || regime == Regime::strict, d.str()});
    }
    return out;
}

}  // namespace rkld
