#include "gaaf/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gaaf::ad {

GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           std::vector<Tensor<double>> params, const GradCheckOptions& options,
                           const std::vector<std::string>& names) {
  for (auto& p : params) p.zero_grad();
  Tensor<double> out = f();
  out.backward();

  std::vector<Tensor<double>::Array> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& theta = params[pi].mutable_data();
    const Eigen::Index n = theta.size();
    Eigen::Index stride = 1;
    if (options.max_entries_per_param > 0 && n > options.max_entries_per_param)
      stride = (n + options.max_entries_per_param - 1) / options.max_entries_per_param;

    for (Eigen::Index i = 0; i < n; i += stride) {
      const double saved = theta(i);
      theta(i) = saved + options.eps;
      const double up = f().item();
      theta(i) = saved - options.eps;
      const double down = f().item();
      theta(i) = saved;

      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[pi](i);
      const double abs_err = std::abs(a - numeric);
      const double rel_err =
          abs_err / std::max({std::abs(a), std::abs(numeric), options.denom_floor});
      ++report.entries_checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (report.worst_entry.empty() || rel_err > report.max_rel_error) {
        std::ostringstream where;
        where << (pi < names.size() ? names[pi] : "param" + std::to_string(pi)) << "[" << i
              << "] analytic=" << a << " numeric=" << numeric;
        report.worst_entry = where.str();
        report.max_rel_error = rel_err;
      }
    }
  }
  report.passed = report.max_rel_error < options.tol;
  return report;
}

}  // namespace gaaf::ad
