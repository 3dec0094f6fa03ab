#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gaaf/autodiff/tensor.hpp"

namespace gaaf::ad {

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-3;
  /// Lower bound on the relative-error denominator, so entries whose true
  /// gradient is ~0 are judged on absolute error.
  double denom_floor = 1e-6;
  /// 0 checks every entry; otherwise an evenly strided subset per parameter.
  Eigen::Index max_entries_per_param = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst_entry;
  bool passed = false;
};

/// Compares backward() gradients of the scalar `f` against central finite
/// differences of each entry of `params`. `f` must rebuild its graph on every
/// call and be deterministic (reseed any rng inside it).
GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           std::vector<Tensor<double>> params, const GradCheckOptions& options = {},
                           const std::vector<std::string>& names = {});

}  // namespace gaaf::ad
