#include "rkld/commands.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rkld/diagnostics.hpp"
#include "rkld/manifest.hpp"
#include "rkld/property_suite.hpp"
#include "rkld/simd.hpp"

namespace rkld {

std::string_view to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::eta:
            return "eta";
        case SweepAxis::n_modes:
            return "n_modes";
        case SweepAxis::beta:
            return "beta";
        case SweepAxis::minibatch:
            return "minibatch";
    }
    return "?";
}

SweepAxis parse_sweep_axis(std::string_view text) {
    if (text == "eta") return SweepAxis::eta;
    if (text == "n_modes") return SweepAxis::n_modes;
    if (text == "beta") return SweepAxis::beta;
    if (text == "minibatch") return SweepAxis::minibatch;
    throw std::invalid_argument("unknown sweep axis '" + std::string(text) + "'");
}

Reference resolve_reference(const ObjectiveSpec& obj, double lambda) {
    Reference r;
    r.x_tilde = minimize_regularized(obj, lambda);
    r.x_tilde_hk = rkhs_norm(r.x_tilde, obj.kernel());
    r.l_tilde = obj.risk(r.x_tilde);
    try {
        const SpectralVector xs = minimize_risk(obj);
        r.l_star = obj.risk(xs);
        r.x_star_norm = xs.norm();
        if (!obj.loss().convex()) r.note = "x* is a local minimizer (non-convex loss)";
    } catch (const ConvergenceError&) {
        r.l_star = obj.loss().infimum();
        r.note = "L has no attained minimizer; L(x*) replaced by the loss infimum";
    }
    return r;
}

namespace {

std::ostream& out_of(const CommandContext& ctx) { return ctx.out ? *ctx.out : std::cout; }
std::ostream& err_of(const CommandContext& ctx) { return ctx.err ? *ctx.err : std::cerr; }

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

Manifest open_manifest(const ExperimentConfig& cfg, const CommandContext& ctx) {
    const std::string hash = cfg.hash();
    const auto path = manifest_path(ctx.out_dir, hash);
    Manifest m;
    if (std::filesystem::exists(path)) m = Manifest::read(path);
    m.config_hash = hash;
    m.config_text = cfg.source_text;
    m.config_dir = cfg.base_dir.string();
    m.seed_override = cfg.seed_override;
    m.chain_seed = cfg.chain.seed;
    m.data_seed = cfg.objective.data_seed;
    m.replicas = cfg.experiment.replicas;
    m.simd = std::string(simd::active().name);
    return m;
}

void record(const ExperimentConfig& cfg, const CommandContext& ctx, const std::string& name,
            std::vector<std::string> outputs) {
    Manifest m = open_manifest(cfg, ctx);
    m.upsert({name, ctx.invocation, std::move(outputs)});
    m.write(manifest_path(ctx.out_dir, cfg.hash()));
}

std::string stem(const std::string& prefix, const ExperimentConfig& cfg, const std::string& ext) {
    return prefix + "_" + short_hash(cfg.hash()) + ext;
}

ExperimentOptions experiment_options(const ExperimentConfig& cfg, double l_star) {
    ExperimentOptions o;
    o.beta = cfg.chain.beta;
    o.lambda = cfg.chain.lambda;
    o.seed = cfg.chain.seed;
    o.time_horizon = cfg.experiment.time_horizon;
    o.batches = cfg.experiment.batches;
    o.test_function = cfg.experiment.test_function;
    o.l_star = l_star;
    return o;
}

std::string fit_table(const RateFit& fit, const ExperimentConfig& cfg) {
    std::ostringstream s;
    s << "slope,slope_se,ci_low,ci_high,inconclusive,note,seed,config_hash\n";
    s << num(fit.slope) << ',' << num(fit.slope_se) << ',' << num(fit.ci_low) << ',' << num(fit.ci_high) << ','
      << (fit.inconclusive ? 1 : 0) << ",\"" << fit.note << "\"," << cfg.chain.seed << ',' << cfg.hash() << '\n';
    return s.str();
}

std::string regime_rationale(const ObjectiveSpec& obj, double lambda) {
    const double M = smoothness_constant(obj);
    const double mu0 = obj.kernel().mu0;
    std::ostringstream s;
    s.precision(6);
    try {
        const Regime r = detect_regime(obj, lambda);
        if (r == Regime::strict) {
            s << "strict dissipativity: lambda = " << lambda << " > M mu0 = " << M * mu0 << "; c_beta = 1";
        } else {
            s << "bounded gradient: lambda = " << lambda << " <= M mu0 = " << M * mu0 << " and B = "
              << *gradient_bound(obj) << " exists; c_beta = sqrt(beta)";
        }
    } catch (const RegimeError& e) {
        s << "no regime: " << e.what();
    }
    return s.str();
}

}  // namespace

int cmd_run(const ExperimentConfig& cfg, const CommandContext& ctx) {
    const ObjectiveSpec obj = cfg.make_objective();
    const Reference ref = resolve_reference(obj, cfg.chain.lambda);
    RunOptions opts;
    opts.l_star = ref.l_star;
    if (cfg.experiment.test_function != TestFunctionKind::sigmoid_gap)
        opts.phi = make_test_function(cfg.experiment.test_function, obj, ref.l_star);
    const RunSummary s = run_chain(cfg.chain, obj, cfg.mode, opts);
    std::filesystem::create_directories(ctx.out_dir);
    const std::string traj = stem("trajectory", cfg, ".csv");
    const std::string summ = stem("summary", cfg, ".csv");
    const std::string ckpt = stem("checkpoint", cfg, ".bin");
    s.write_csv(ctx.out_dir / traj);
    std::ostringstream t;
    t << "key,value\n";
    t << "config_hash," << cfg.hash() << '\n';
    t << "seed," << cfg.chain.seed << '\n';
    t << "mode," << to_string(cfg.mode) << '\n';
    t << "horizon," << cfg.chain.horizon << '\n';
    t << "burn_in," << cfg.chain.burn_in << '\n';
    t << "checkpoint_cadence," << checkpoint_cadence(cfg.chain.horizon) << '\n';
    t << "retained," << s.retained() << '\n';
    t << "cesaro_phi," << num(s.cesaro_phi()) << '\n';
    t << "cesaro_risk," << num(s.cesaro_risk()) << '\n';
    t << "cesaro_norm," << num(s.cesaro.norm()) << '\n';
    t << "final_norm," << num(s.final_state.x.norm()) << '\n';
    t << "final_step," << s.final_state.step << '\n';
    t << "l_star," << num(ref.l_star) << '\n';
    t << "aborted," << (s.aborted ? 1 : 0) << '\n';
    t << "abort_reason,\"" << s.abort_reason << "\"\n";
    write_file_atomic(ctx.out_dir / summ, t.str());
    write_checkpoint(ctx.out_dir / ckpt, {s.final_state, s.cesaro});
    record(cfg, ctx, "run", {traj, summ, ckpt});
    auto& o = out_of(ctx);
    o << "run: " << s.final_state.step << " steps, " << s.retained() << " retained, cesaro phi "
      << num(s.cesaro_phi()) << '\n';
    o << "wrote " << (ctx.out_dir / traj).string() << '\n';
    if (s.aborted) {
        err_of(ctx) << "numerical abort: " << s.abort_reason << '\n';
        return kExitNumerical;
    }
    return kExitOk;
}

int cmd_verify(const ExperimentConfig& cfg, const CommandContext& ctx) {
    const auto results = run_property_suite(cfg, ctx.threads);
    std::ostringstream t;
    std::size_t failed = 0;
    for (const auto& r : results) {
        t << (r.pass ? "PASS " : "FAIL ") << r.module << '.' << r.name << "  " << r.measured << '\n';
        failed += r.pass ? 0 : 1;
    }
    t << (failed == 0 ? "all properties pass" : std::to_string(failed) + " properties failed") << '\n';
    out_of(ctx) << t.str();
    std::filesystem::create_directories(ctx.out_dir);
    const std::string file = stem("verify", cfg, ".txt");
    write_file_atomic(ctx.out_dir / file, t.str());
    record(cfg, ctx, "verify", {file});
    return failed == 0 ? kExitOk : kExitCheckFailed;
}

int cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, const CommandContext& ctx) {
    const auto& ex = cfg.experiment;
    const ObjectiveSpec obj = cfg.make_objective();
    const Reference ref = resolve_reference(obj, cfg.chain.lambda);
    std::filesystem::create_directories(ctx.out_dir);
    const std::string name = "sweep_" + std::string(to_string(axis));
    const std::string table = stem(name, cfg, ".csv");
    const std::string verdict_file = stem(name + "_verdict", cfg, ".txt");
    std::vector<std::string> outputs{table, verdict_file};
    std::ostringstream csv, verdict;
    int code = kExitOk;
    const std::string prov = "," + std::to_string(cfg.chain.seed) + "," + cfg.hash() + "\n";

    auto fit_verdict = [&](const RateFit& fit, double lo, double hi, bool extra_ok, const std::string& extra) {
        verdict << "slope " << num(fit.slope) << " (95% CI " << num(fit.ci_low) << ", " << num(fit.ci_high)
                << "), band [" << lo << ", " << hi << "]" << extra << '\n';
        if (fit.inconclusive) {
            verdict << "verdict: inconclusive (" << fit.note << ")\n";
            return kExitInconclusive;
        }
        const bool ok = fit.slope >= lo && fit.slope <= hi && fit.ci_low > 0.0 && extra_ok;
        verdict << "verdict: " << (ok ? "pass" : "fail") << '\n';
        return ok ? kExitOk : kExitCheckFailed;
    };

    switch (axis) {
        case SweepAxis::eta: {
            if (ex.eta_list.size() < 4) throw ConfigError("sweep eta needs >= 4 points in experiment.eta_list");
            const auto res = weak_error_vs_eta(obj, ex.eta_list, ex.eta_ref, experiment_options(cfg, ref.l_star));
            csv << "eta,steps,mean_phi,error,error_se,seed,config_hash\n";
            for (const auto& p : res.points)
                csv << num(p.eta) << ',' << p.steps << ',' << num(p.mean_phi) << ',' << num(p.error) << ','
                    << num(p.error_se) << prov;
            verdict << "reference eta " << ex.eta_ref << ": mean phi " << num(res.reference) << ", fine grid "
                    << num(res.fine_step) << '\n';
            const std::string fit_file = stem(name + "_fit", cfg, ".csv");
            write_file_atomic(ctx.out_dir / fit_file, fit_table(res.fit, cfg));
            outputs.push_back(fit_file);
            code = fit_verdict(res.fit, 0.4, 1.3, true, "");
            break;
        }
        case SweepAxis::n_modes: {
            if (ex.n_list.size() < 4) throw ConfigError("sweep n_modes needs >= 4 points in experiment.n_list");
            const auto res = galerkin_error_vs_n(cfg.make_dataset(), cfg.objective.loss, cfg.kernel,
                                                 cfg.objective.lambda0, ex.n_list, ex.n_ref, cfg.chain.eta, 0.0,
                                                 experiment_options(cfg, ref.l_star));
            csv << "n,abscissa,mean_phi,error,error_se,seed,config_hash\n";
            bool monotone = true;
            for (std::size_t i = 0; i < res.points.size(); ++i) {
                const auto& p = res.points[i];
                csv << p.n << ',' << num(p.abscissa) << ',' << num(p.mean_phi) << ',' << num(p.error) << ','
                    << num(p.error_se) << prov;
                if (i > 0 && p.error >= res.points[i - 1].error) monotone = false;
            }
            verdict << "reference N " << ex.n_ref << ": mean phi " << num(res.reference) << '\n';
            const std::string fit_file = stem(name + "_fit", cfg, ".csv");
            write_file_atomic(ctx.out_dir / fit_file, fit_table(res.fit, cfg));
            outputs.push_back(fit_file);
            code = fit_verdict(res.fit, 0.5, 1.5, monotone, monotone ? ", error monotone" : ", error NOT monotone");
            break;
        }
        case SweepAxis::beta: {
            if (ex.beta_list.size() < 2) throw ConfigError("sweep beta needs >= 2 points in experiment.beta_list");
            csv << "beta,gap,se,first_half,second_half,stationary,bound,seed,config_hash\n";
            bool monotone = true, stationary = true, within = true;
            GibbsGap prev;
            const double M = smoothness_constant(obj);
            for (std::size_t i = 0; i < ex.beta_list.size(); ++i) {
                ChainConfig c = cfg.chain;
                c.beta = ex.beta_list[i];
                const GibbsGap g = gibbs_gap_empirical(c, obj, ref.l_tilde, ex.replicas, ctx.threads);
                const double bound = gibbs_concentration_bound(M, c.lambda, c.beta, ref.x_tilde_hk);
                csv << num(c.beta) << ',' << num(g.gap) << ',' << num(g.se) << ',' << num(g.first_half) << ','
                    << num(g.second_half) << ',' << (g.stationary ? 1 : 0) << ',' << num(bound) << prov;
                stationary = stationary && g.stationary;
                within = within && g.gap <= ex.slack * bound;
                if (i > 0 && g.gap > prev.gap + 3.0 * std::hypot(g.se, prev.se)) monotone = false;
                prev = g;
            }
            verdict << "gap nonincreasing in beta within 3 sigma: " << (monotone ? "yes" : "no") << '\n';
            verdict << "gap <= " << ex.slack << " x concentration bound: " << (within ? "yes" : "no") << '\n';
            if (!stationary) {
                verdict << "verdict: inconclusive (non-stationary half averages)\n";
                code = kExitInconclusive;
            } else {
                verdict << "verdict: " << (monotone && within ? "pass" : "fail") << '\n';
                code = monotone && within ? kExitOk : kExitCheckFailed;
            }
            break;
        }
        case SweepAxis::minibatch: {
            if (ex.m_list.size() < 2) throw ConfigError("sweep minibatch needs >= 2 points in experiment.m_list");
            const TestFunction phi = make_test_function(ex.test_function, obj, ref.l_star);
            const auto pts = sgld_discrepancy(cfg.chain, obj, phi, cfg.chain.horizon, ex.m_list, ex.replicas,
                                              ctx.threads);
            csv << "m,r_n,discrepancy,se,c_fit,seed,config_hash\n";
            bool monotone = true;
            for (std::size_t i = 0; i < pts.size(); ++i) {
                const auto& p = pts[i];
                csv << p.m << ',' << num(p.r_n) << ',' << num(p.discrepancy) << ',' << num(p.se) << ','
                    << num(p.c_fit) << prov;
                if (i > 0 && p.discrepancy > pts[i - 1].discrepancy + 3.0 * std::hypot(p.se, pts[i - 1].se))
                    monotone = false;
            }
            bool full_zero = true;
            if (pts.back().m == obj.n_train()) full_zero = pts.back().discrepancy == 0.0;
            verdict << "discrepancy nonincreasing in m within 3 sigma: " << (monotone ? "yes" : "no") << '\n';
            if (pts.back().m == obj.n_train())
                verdict << "full batch discrepancy exactly 0: " << (full_zero ? "yes" : "no") << '\n';
            verdict << "verdict: " << (monotone && full_zero ? "pass" : "fail") << '\n';
            code = monotone && full_zero ? kExitOk : kExitCheckFailed;
            break;
        }
    }
    write_file_atomic(ctx.out_dir / table, csv.str());
    write_file_atomic(ctx.out_dir / verdict_file, verdict.str());
    record(cfg, ctx, name, outputs);
    out_of(ctx) << csv.str() << verdict.str();
    return code;
}

int cmd_report(const std::filesystem::path& manifest_file, const CommandContext& ctx) {
    const Manifest m = Manifest::read(manifest_file);
    const std::filesystem::path dir = manifest_file.has_parent_path() ? manifest_file.parent_path() : ".";
    std::vector<std::string> missing;
    for (const auto& r : m.runs)
        for (const auto& o : r.outputs)
            if (!std::filesystem::exists(dir / o)) missing.push_back(r.name + ": " + o);
    if (!missing.empty()) {
        auto& e = err_of(ctx);
        e << "missing run outputs:\n";
        for (const auto& s : missing) e << "  " << s << '\n';
        return kExitConfig;
    }
    ExperimentConfig cfg = ExperimentConfig::parse(m.config_text, manifest_file.string() + ":config_text",
                                                   m.config_dir);
    cfg.chain.seed = m.chain_seed;
    cfg.seed_override = m.seed_override;
    const ObjectiveSpec obj = cfg.make_objective();
    const Reference ref = resolve_reference(obj, cfg.chain.lambda);
    const auto& ch = cfg.chain;

    std::ostringstream txt, csv;
    csv << "section,name,value,config_hash\n";
    auto row = [&](const std::string& section, const std::string& name, double v) {
        csv << section << ',' << name << ',' << num(v) << ',' << m.config_hash << '\n';
        txt << "  " << name << " = " << num(v) << '\n';
    };
    txt << "rkld report\n";
    txt << "config hash " << m.config_hash << "\n";
    txt << "tool " << m.tool << " " << m.version << ", kernels " << m.simd << "\n";
    txt << "chain seed " << m.chain_seed << ", data seed " << m.data_seed << ", replicas " << m.replicas << "\n\n";
    txt << "[regime]\n  " << regime_rationale(obj, ch.lambda) << "\n";
    if (!ref.note.empty()) txt << "  note: " << ref.note << '\n';
    txt << "\n[theory constants]\n";
    try {
        TheoryInputs in;
        in.eta = ch.eta;
        in.beta = ch.beta;
        in.lambda = ch.lambda;
        in.x_star_norm = ref.x_star_norm;
        in.x_tilde_hk = ref.x_tilde_hk;
        in.n_steps = ch.horizon;
        in.minibatch = ch.minibatch;
        in.delta = cfg.experiment.delta < 1.0 ? cfg.experiment.delta : 0.5;
        const TheoryConstants tc = theory_constants(obj, in);
        row("theory", "M", tc.M);
        if (tc.B) row("theory", "B", *tc.B);
        row("theory", "m", tc.m);
        row("theory", "c", tc.c);
        row("theory", "rho", tc.rho);
        row("theory", "b", tc.b);
        row("theory", "k1", tc.k1);
        row("theory", "gap_eta", tc.gap_eta);
        row("theory", "gap_0", tc.gap_0);
        if (!tc.gap_certified) txt << "  (bounded-regime gap: formula evaluation, not a certified gap)\n";
        row("theory", "c_beta", tc.c_beta);
        row("theory", "gibbs_bound", tc.gibbs_bound);
        row("theory", "r_n", tc.r_n);
        row("reference", "l_star", ref.l_star);
        row("reference", "l_tilde", ref.l_tilde);
        row("reference", "x_tilde_hk", ref.x_tilde_hk);
        txt << "\n[tail bound decomposition at n = horizon, delta = " << cfg.experiment.delta
            << ", kappa = " << cfg.experiment.kappa << "]\n";
        const TailTerms tt =
            theorem_rhs(tc, ch.eta, ch.horizon, cfg.experiment.delta, cfg.experiment.kappa, ref.l_tilde - ref.l_star);
        row("tail", "optimization", tt.optimization);
        row("tail", "ergodic", tt.ergodic);
        row("tail", "discretization", tt.discretization);
        row("tail", "gibbs", tt.gibbs);
        row("tail", "rhs", tt.rhs);
        txt << "  (hidden constants of the bound are not modeled; compare shapes, not absolute values)\n";
    } catch (const std::exception& e) {
        txt << "  unavailable: " << e.what() << '\n';
    }
    for (const auto& r : m.runs) {
        txt << "\n[" << r.name << "]\n";
        if (!r.command.empty()) txt << "  command: " << r.command << '\n';
        for (const auto& o : r.outputs) {
            txt << "  -- " << o << '\n';
            if (o.ends_with(".bin")) continue;
            std::ifstream in(dir / o, std::ios::binary);
            std::string line;
            // Trajectories can be long; show the final rows only.
            std::vector<std::string> lines;
            while (std::getline(in, line)) lines.push_back(line);
            const bool trajectory = o.rfind("trajectory", 0) == 0;
            for (std::size_t i = 0; i < lines.size(); ++i) {
                if (trajectory && i > 0 && i + 5 < lines.size()) continue;
                txt << "  " << lines[i] << '\n';
            }
            if (trajectory && lines.size() > 6) txt << "  (" << lines.size() - 1 << " rows total)\n";
        }
    }
    const std::string h12 = short_hash(m.config_hash);
    write_file_atomic(ctx.out_dir / ("report_" + h12 + ".txt"), txt.str());
    write_file_atomic(ctx.out_dir / ("report_" + h12 + ".csv"), csv.str());
    out_of(ctx) << txt.str();
    return kExitOk;
}

}  // namespace rkld
