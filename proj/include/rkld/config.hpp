#pragma once

// Experiment configuration. Grammar (one item per line):
//   [section]            one of kernel, objective, chain, experiment
//   key = value          scalars; lists are comma-separated
//   # or ; to end of line starts a comment
// Unknown sections or keys, duplicates and malformed values are errors that
// name the offending line.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rkld/diagnostics.hpp"
#include "rkld/dynamics.hpp"
#include "rkld/objective.hpp"
#include "rkld/spectral_space.hpp"

namespace rkld {

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& origin, std::size_t line, const std::string& message);
    explicit ConfigError(const std::string& message) : std::runtime_error(message) {}
};

enum class DatasetKind { regression, classification, file };

struct ObjectiveBlock {
    LossKind loss = LossKind::logistic;
    DatasetKind dataset = DatasetKind::classification;
    std::filesystem::path dataset_path;  // when dataset = file
    std::size_t n_train = 20;
    std::uint64_t data_seed = 1;
    double noise_sigma = 0.1;
    std::optional<double> lambda0;
};

struct ExperimentBlock {
    std::vector<double> eta_list{0.2, 0.1, 0.05, 0.025};
    double eta_ref = 0.003;
    std::vector<std::size_t> n_list{4, 8, 16, 32};
    std::size_t n_ref = 128;
    std::vector<double> beta_list{2, 4, 8, 16};
    std::vector<std::size_t> m_list{2, 5, 10};  // unset: {n_train/5, n_train/2, n_train}
    double delta = 0.2;
    std::size_t replicas = 200;
    double kappa = 0.1;
    TestFunctionKind test_function = TestFunctionKind::sigmoid_gap;
    double slack = 10.0;
    double time_horizon = 1000.0;
    std::size_t batches = 20;
};

struct ExperimentConfig {
    KernelSpec kernel;
    ObjectiveBlock objective;
    ChainConfig chain;
    ChainMode mode = ChainMode::gld;
    ExperimentBlock experiment;
    std::string source_text;  // verbatim input, hashed into the manifest
    std::filesystem::path base_dir;
    bool seed_override = false;  // chain.seed replaced from the command line

    // Hash of the text plus any command-line override.
    std::string hash() const;

    // Fully validated; a config that parses can be simulated.
    static ExperimentConfig parse(const std::string& text, const std::string& origin = "<config>",
                                  const std::filesystem::path& base_dir = {});
    static ExperimentConfig load(const std::filesystem::path& path);

    Dataset make_dataset() const;
    ObjectiveSpec make_objective() const;
    // Number of training points the objective will have.
    std::size_t n_train() const;
};

// SHA-256 of the config text, lowercase hex.
std::string config_hash(const std::string& text);

}  // namespace rkld
