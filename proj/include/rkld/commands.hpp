#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "rkld/config.hpp"

namespace rkld {

enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 1,
    kExitNumerical = 2,
    kExitInconclusive = 3,
    kExitCheckFailed = 4,
};

enum class SweepAxis { eta, n_modes, beta, minibatch };
std::string_view to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view text);

struct CommandContext {
    std::filesystem::path out_dir = ".";
    std::size_t threads = 1;
    std::ostream* out = nullptr;  // defaults to std::cout
    std::ostream* err = nullptr;  // defaults to std::cerr
    std::string invocation;       // recorded in the manifest
};

// Reference values shared by the commands: L(x*) (or the loss infimum when no
// minimizer is attained), ||x*||, x~.
struct Reference {
    double l_star = 0.0;
    std::optional<double> x_star_norm;
    SpectralVector x_tilde;
    double x_tilde_hk = 0.0;
    double l_tilde = 0.0;
    std::string note;
};
Reference resolve_reference(const ObjectiveSpec& obj, double lambda);

int cmd_run(const ExperimentConfig& cfg, const CommandContext& ctx);
int cmd_verify(const ExperimentConfig& cfg, const CommandContext& ctx);
int cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, const CommandContext& ctx);
int cmd_report(const std::filesystem::path& manifest, const CommandContext& ctx);

}  // namespace rkld
