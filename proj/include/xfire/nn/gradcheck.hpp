#pragma once

// Central-difference verification of analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xfire/nn/tensor.hpp"

namespace xfire::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Relative error is |a - n| / max(|a|, |n|, floor). The floor keeps
  // near-zero gradients from turning round-off into a failure.
  double floor = 1e-3;
  // 0 checks every element; otherwise at most this many per parameter, evenly spaced.
  std::size_t max_per_parameter = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// `loss` evaluates the scalar objective at the current parameter values.
/// `analytic` zeroes and fills every parameter's grad.
inline GradCheckReport gradient_check(std::span<Parameter<double>* const> params,
                                      const std::function<double()>& loss,
                                      const std::function<void()>& analytic, GradCheckOptions opt = {}) {
  analytic();
  GradCheckReport report;
  report.tolerance = opt.tolerance;
  for (auto* p : params) {
    const std::size_t n = p->value.size();
    const std::size_t stride =
        opt.max_per_parameter == 0 || n <= opt.max_per_parameter ? 1 : (n + opt.max_per_parameter - 1) / opt.max_per_parameter;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = p->value[i];
      p->value[i] = saved + opt.step;
      const double up = loss();
      p->value[i] = saved - opt.step;
      const double down = loss();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double err = relative_error(p->grad[i], numeric, opt.floor);
      ++report.checked;
      if (err > report.max_rel_error || report.worst_parameter.empty()) {
        report.max_rel_error = err;
        report.worst_parameter = p->name;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.max_rel_error < opt.tolerance;
  return report;
}

}  // namespace xfire::nn
