#pragma once

#include <string>
#include <vector>

#include "rkld/config.hpp"

namespace rkld {

struct PropertyResult {
    std::string module;
    std::string name;
    bool pass = false;
    std::string measured;
};

// Invariants of every module plus the assumption predicates, evaluated on the
// configured kernel, objective and chain. Sized to finish in seconds.
std::vector<PropertyResult> run_property_suite(const ExperimentConfig& cfg, std::size_t threads);

}  // namespace rkld
