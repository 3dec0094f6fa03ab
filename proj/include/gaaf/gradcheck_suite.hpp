#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gaaf/autodiff/grad_check.hpp"

namespace gaaf {

struct GradCheckCase {
  std::string name;
  ad::GradCheckReport report;
};

/// Finite-difference checks (double precision, eps 1e-4, rel tol 1e-3) of
/// every differentiable op and of a miniature locator with and without
/// attention. Each case reads out its op through a fixed random linear map.
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 1);

}  // namespace gaaf
