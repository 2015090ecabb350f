#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cormult/grad_check.hpp"

namespace cormult {

// One differentiable unit checked against central differences at step 1e-5
// and tolerance 1e-4 for a given seed.
struct GradientCase {
  std::string name;
  std::function<GradCheckReport(std::uint64_t seed)> run;
};

// Every differentiable primitive op.
std::vector<GradientCase> primitive_gradient_cases();
// encoder_block, triplet_loss, crossmodal, memory_fuse and the full
// 2-sample toy CorMulT model.
std::vector<GradientCase> module_gradient_cases();

struct GradientSuiteResult {
  std::string name;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

// Primitives on `primitive_seeds` seeds each, modules on one seed.
std::vector<GradientSuiteResult> run_gradient_suite(std::size_t primitive_seeds = 10);

}  // namespace cormult
