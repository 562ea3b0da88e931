#include "rkld/property_suite.hpp"

#include <cmath>
#include <sstream>

#include "rkld/diagnostics.hpp"
#include "rkld/stats.hpp"

namespace rkld {
namespace {

template <class... Args>
std::string fmt(const Args&... args) {
    std::ostringstream s;
    s.precision(6);
    (s << ... << args);
    return s.str();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

SpectralVector random_vector(const CounterRng& rng, std::uint64_t step, std::size_t n, double scale) {
    SpectralVector v = gaussian_modes(n, rng, step);
    v *= scale;
    return v;
}

}  // namespace

std::vector<PropertyResult> run_property_suite(const ExperimentConfig& cfg, std::size_t threads) {
    std::vector<PropertyResult> out;
    auto add = [&](std::string module, std::string name, bool pass, std::string measured) {
        out.push_back({std::move(module), std::move(name), pass, std::move(measured)});
    };
    // Several checks need a finite-mode operator; keep them cheap.
    const KernelSpec& ks = cfg.kernel;
    const ChainConfig& cc = cfg.chain;
    const std::size_t n = cc.n_modes;
    const CounterRng rng(derive_key(cc.seed, 7, Stream::init));
    const ObjectiveSpec obj = cfg.make_objective();

    {
        const auto s = resolvent_s_eta(ks, cc.lambda, cc.eta, n);
        double worst = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double mu = eigenvalue(ks, k);
            worst = std::max(worst, rel_err(s.scale(k), mu / (mu + cc.lambda * cc.eta)));
        }
        add("spectral_space", "s_eta_mode_scales", worst <= 1e-12, fmt("max rel err ", worst));
        const double expect = 1.0 / (1.0 + cc.lambda * cc.eta / ks.mu0);
        const double e = rel_err(s.operator_norm(), expect);
        add("spectral_space", "s_eta_operator_norm", e <= 1e-12, fmt("||S|| = ", s.operator_norm(), " vs ", expect));
        const auto sp = resolvent_s_eta_prime(ks, 0.0, cc.lambda, cc.eta, n);
        bool same = true;
        for (std::size_t k = 0; k < n; ++k) same = same && sp.scale(k) == s.scale(k);
        add("spectral_space", "s_eta_prime_reduces_at_zero_ridge", same, same ? "identical" : "differs");
    }
    {
        const auto a = generator_a(ks, cc.lambda, n);
        double worst = -1e300;
        for (std::uint64_t t = 0; t < 20; ++t) {
            const SpectralVector x = random_vector(rng, t, n, 1.0);
            const double q = inner(a.apply(x), x) / x.norm_squared();
            worst = std::max(worst, q + cc.lambda / ks.mu0);
        }
        add("spectral_space", "generator_negativity", worst <= 1e-12,
            fmt("max <Ax,x>/||x||^2 + lambda/mu0 = ", worst));
    }
    {
        double worst = 0.0;
        for (std::uint64_t t = 0; t < 20; ++t) {
            const double zz = rng.uniform(100 + t, 0);
            const SpectralVector psi = feature_map(ks, zz, n);
            worst = std::max(worst, rel_err(psi.norm_squared(), kernel_gamma(ks, zz, zz, n)));
        }
        add("spectral_space", "feature_map_reproduces_kernel", worst <= 1e-12, fmt("max rel err ", worst));
    }
    {
        // S^{-1} X_{n+1} must give back the explicit half-step mode by mode.
        ChainConfig c = cc;
        c.minibatch.reset();
        Stepper st(c, &obj, ChainMode::gld);
        ChainState s = ChainState::initial(c);
        s.x = random_vector(rng, 200, n, 0.3);
        const SpectralVector before = s.x;
        const SpectralVector xi = gaussian_modes(n, rng, 201);
        st.step_with_noise(s, xi.coeffs());
        SpectralVector g = obj.grad(before);
        if (obj.lambda0()) g -= *obj.lambda0() * before;
        double worst = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double lhs = s.x[k] / st.resolvent().scale(k);
            const double rhs = before[k] - c.eta * g[k] + c.noise_scale() * xi[k];
            worst = std::max(worst, rel_err(lhs, rhs));
        }
        add("dynamics", "semi_implicit_identity", worst <= 1e-12, fmt("max rel err ", worst));
    }
    {
        double worst = 0.0;
        for (std::uint64_t t = 0; t < 20; ++t) {
            const SpectralVector x = random_vector(rng, 300 + 2 * t, n, 0.5);
            const SpectralVector h = random_vector(rng, 301 + 2 * t, n, 1.0);
            const double analytic = inner(obj.grad(x), h);
            const double e = 1e-5;
            const double fd = (obj.risk(x + e * h) - obj.risk(x - e * h)) / (2 * e);
            worst = std::max(worst, std::abs(analytic - fd) / std::max(1e-8, std::abs(analytic)));
        }
        add("objective", "gradient_finite_difference", worst < 1e-5, fmt("max rel err ", worst));
    }
    {
        const auto pts = obj.dataset().points();
        const std::size_t nt = std::min<std::size_t>(6, pts.size());
        if (nt >= 3) {
            const ObjectiveSpec small(Dataset(std::vector<DataPoint>(pts.begin(), pts.begin() + nt)), obj.loss().kind,
                                      ks, n, obj.lambda0());
            const SpectralVector x = random_vector(rng, 400, n, 0.5);
            const SpectralVector g = small.grad(x);
            SpectralVector mean(n);
            double var = 0.0;
            std::size_t count = 0;
            for (std::uint32_t i = 0; i < nt; ++i)
                for (std::uint32_t j = i + 1; j < nt; ++j) {
                    const std::uint32_t b[2] = {i, j};
                    const SpectralVector gb = small.stochastic_grad(x, b);
                    mean += gb;
                    var += (gb - g).norm_squared();
                    ++count;
                }
            mean *= 1.0 / static_cast<double>(count);
            var /= static_cast<double>(count);
            const double e1 = (mean - g).norm() / std::max(1.0, g.norm());
            const double e2 = rel_err(var, minibatch_variance(small, x, 2));
            add("objective", "minibatch_unbiased_exhaustive", e1 <= 1e-12, fmt(count, " subsets, rel err ", e1));
            add("objective", "minibatch_variance_identity", e2 <= 1e-12, fmt("rel err ", e2));
        }
    }
    {
        ChainConfig c = cc;
        c.horizon = std::min<std::uint64_t>(cc.horizon, 500);
        c.burn_in = default_burn_in(c.horizon);
        const RunSummary a = run_chain(c, obj, cfg.mode);
        const RunSummary b = run_chain(c, obj, cfg.mode);
        add("dynamics", "determinism", a.final_state.x == b.final_state.x && a.cesaro_phi() == b.cesaro_phi(),
            fmt("final norm ", a.final_state.x.norm()));
        double sum = 0.0;
        std::size_t cnt = 0;
        for (const auto& r : a.rows)
            if (r.step > c.burn_in) {
                sum += r.phi;
                ++cnt;
            }
        const double replay = sum / static_cast<double>(cnt);
        add("dynamics", "cesaro_replay", std::abs(replay - a.cesaro_phi()) <= 1e-12,
            fmt("replayed ", replay, " vs ", a.cesaro_phi()));
        ChainConfig full = c;
        full.minibatch = obj.n_train();
        const RunSummary g = run_chain(c, obj, ChainMode::gld);
        const RunSummary sg = run_chain(full, obj, ChainMode::sgld);
        add("dynamics", "full_batch_reduction", g.final_state.x == sg.final_state.x,
            g.final_state.x == sg.final_state.x ? "bit-identical" : "trajectories differ");
    }
    {
        ChainConfig c = cc;
        c.horizon = 20000;
        c.burn_in = 0;
        Stepper st(c, ks);
        ChainState s = ChainState::initial(c);
        std::vector<double> sq;
        sq.reserve(c.horizon);
        while (s.step < c.horizon) {
            st.step(s);
            sq.push_back(s.x.norm_squared());
        }
        const auto v = ou_stationary_variance(ks, c.lambda, c.eta, c.beta, n);
        double bound = 0.0;
        for (double x : v) bound += x;
        const auto est = stats::batch_means(sq, 20);
        add("dynamics", "ou_second_moment_bound", est.mean <= bound + 3 * est.standard_error,
            fmt("E||Z||^2 ~ ", est.mean, " +- ", est.standard_error, " vs ", bound));
    }
    {
        // Quadratic instance with lambda = 4 M mu0.
        const ObjectiveSpec quad(obj.dataset(), LossKind::squared, ks, n);
        ChainConfig c = cc;
        c.lambda = 4.0 * smoothness_constant(quad) * ks.mu0;
        c.minibatch.reset();
        const double factor = (1 + c.eta * smoothness_constant(quad)) / (1 + c.eta * c.lambda / ks.mu0);
        const auto d = coupled_run(c, quad, random_vector(rng, 500, n, 0.5), random_vector(rng, 501, n, 0.5), 1000);
        // Above the rounding floor only; there the inequality is exact.
        double worst = -1.0;
        std::size_t checked = 0;
        for (std::size_t i = 1; i < d.size() && d[i - 1] > 1e-10 * d[0]; ++i, ++checked)
            worst = std::max(worst, d[i] / d[i - 1] - factor);
        add("dynamics", "coupled_contraction", worst <= 1e-9 && checked > 0,
            fmt(checked, " steps, max ratio - factor = ", worst));
    }
    {
        double worst = 0.0;
        for (double lam : {2.0, 3.0, 10.0})
            for (double mu0 : {0.5, 1.0})
                for (double M : {0.1, 1.0})
                    for (double eta : {0.001, 0.1, 1.0}) {
                        if (!(lam > M * mu0)) continue;
                        const double gap = spectral_gap_strict(lam, mu0, M, eta);
                        worst = std::max(worst, std::abs((1 - eta * gap) - (1 + eta * M) / (1 + eta * lam / mu0)));
                    }
        add("diagnostics", "strict_gap_contraction_identity", worst <= 1e-12, fmt("max abs err ", worst));
        const double gb = gibbs_concentration_bound(2, 1, 4, 1);
        add("diagnostics", "gibbs_bound_closed_form", std::abs(gb - 2.25) <= 1e-12, fmt("value ", gb));
        const double rn = minibatch_discrepancy_rate(10, 1, 0.1, 10, 5);
        add("diagnostics", "r_n_closed_form", std::abs(rn - 1.0 / 9.0) <= 1e-12, fmt("value ", rn));
    }
    {
        bool ok = true;
        double worst = 0.0;
        for (std::uint64_t t = 0; t < 20; ++t) {
            const double gap = 3.0 * rng.uniform(600 + t, 0);
            const double p = sigmoid_gap(gap);
            ok = ok && p >= 0.0 && p < 0.5 && p <= gap;
            worst = std::max(worst, p);
        }
        add("diagnostics", "sigmoid_statistic_bounds", ok && sigmoid_gap(0.0) == 0.0, fmt("max phi ", worst));
    }
    (void)threads;
    for (const auto& a : check_assumptions(obj, cc.lambda, cc.seed)) add("assumptions", a.name, a.pass, a.detail);
    return out;
}

}  // namespace rkld
