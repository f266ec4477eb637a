#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "drakes/config.hpp"

namespace drakes::cli {

struct SuiteResult {
  bool pass = false;
  nlohmann::json report;
};

// Exact-oracle suites on single-token instances: tilted-target, doob, kolmogorov,
// feynman-kac.
SuiteResult run_suite(const std::string& name, const Config& cfg);

}  // namespace drakes::cli
