#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mslr/gradcheck.hpp"

namespace mslr {

struct SuiteResult {
  std::string name;
  GradCheckReport report;
};

// Finite-difference checks of every differentiable op on small random inputs
// (tolerance 1e-4) plus the end-to-end pretraining loss of the tiny model
// (tolerance 1e-3).
std::vector<std::string> gradcheck_case_names();
std::vector<SuiteResult> run_gradcheck_suite(std::uint64_t seed);
SuiteResult run_gradcheck_case(const std::string& name, std::uint64_t seed);

}  // namespace mslr
