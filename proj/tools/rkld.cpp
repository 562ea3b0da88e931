#include <cstdlib>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "rkld/commands.hpp"
#include "rkld/config.hpp"
#include "rkld/dynamics.hpp"

namespace {

std::string join_args(int argc, char** argv) {
    std::ostringstream s;
    for (int i = 0; i < argc; ++i) s << (i ? " " : "") << argv[i];
    return s.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Langevin sampling in a spectral RKHS: runs, property checks, rate sweeps, reports"};
    app.require_subcommand(1);

    std::string config_path;
    std::string manifest_path;
    std::string axis = "eta";
    std::string out_dir;
    std::uint64_t seed = 0;
    std::size_t threads = std::max(1u, std::thread::hardware_concurrency());

    auto common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", config_path, "experiment config file");
        if (needs_config) opt->required();
        sub->add_option("--seed", seed, "override chain.seed");
        sub->add_option("--threads", threads, "worker threads for replicas")->check(CLI::PositiveNumber);
        sub->add_option("--out", out_dir, "output directory (default $RKLD_OUT or .)");
    };
    auto* run = app.add_subcommand("run", "simulate one chain and write its trajectory");
    common(run, true);
    auto* verify = app.add_subcommand("verify", "run the property suite");
    common(verify, true);
    auto* sweep = app.add_subcommand("sweep", "rate or monotonicity experiment along one axis");
    common(sweep, true);
    sweep->add_option("--axis", axis, "eta | n_modes | beta | minibatch")
        ->check(CLI::IsMember({"eta", "n_modes", "beta", "minibatch"}));
    auto* report = app.add_subcommand("report", "consolidate a manifest into a report");
    report->add_option("--manifest", manifest_path, "manifest JSON")->required();
    report->add_option("--out", out_dir, "output directory (default $RKLD_OUT or .)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : rkld::kExitConfig;
    }

    rkld::CommandContext ctx;
    if (out_dir.empty()) {
        const char* env = std::getenv("RKLD_OUT");
        out_dir = env && *env ? env : ".";
    }
    ctx.out_dir = out_dir;
    ctx.threads = threads;
    ctx.invocation = join_args(argc, argv);

    try {
        if (report->parsed()) return rkld::cmd_report(manifest_path, ctx);
        rkld::ExperimentConfig cfg = rkld::ExperimentConfig::load(config_path);
        CLI::App* active = run->parsed() ? run : verify->parsed() ? verify : sweep;
        if (active->count("--seed")) {
            cfg.chain.seed = seed;
            cfg.seed_override = true;
        }
        if (run->parsed()) return rkld::cmd_run(cfg, ctx);
        if (verify->parsed()) return rkld::cmd_verify(cfg, ctx);
        return rkld::cmd_sweep(cfg, rkld::parse_sweep_axis(axis), ctx);
    } catch (const rkld::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return rkld::kExitConfig;
    } catch (const rkld::NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return rkld::kExitNumerical;
    } catch (const rkld::ConvergenceError& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return rkld::kExitNumerical;
    } catch (const rkld::RegimeError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return rkld::kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return rkld::kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return rkld::kExitConfig;
    }
}
