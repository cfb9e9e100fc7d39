#pragma once

#include <cstdint>
#include <vector>

#include "xmodal/grad_check.hpp"

namespace xmodal {

struct SuiteOptions {
  double h = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 17;
};

// Finite-difference checks for every differentiable op plus the full
// composite loss on a 4-identity toy batch.
std::vector<GradReport> run_grad_suite(const SuiteOptions& opt = {});

bool suite_passes(const std::vector<GradReport>& reports, double tol);

}  // namespace xmodal
