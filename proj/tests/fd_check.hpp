#pragma once

// Central-difference gradient checking shared by the unit and acceptance
// suites. Relative error uses |analytic| + 1e-8 in the denominator; exact
// agreement below 1e-9 absolute counts as a match so that coordinates whose
// true gradient is zero are not failed on finite-difference noise.

#include <cmath>
#include <cstddef>
#include <functional>

#include "calicausal/model.hpp"

namespace fdcheck {

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
  std::size_t checked = 0;
};

inline FdReport check_gradients(calicausal::ModelParams& params,
                                const calicausal::GradientBundle& analytic,
                                const std::function<double()>& loss_value, double h = 1e-5) {
  auto ptrs = calicausal::param_pointers(params);
  auto gptrs = calicausal::param_pointers(const_cast<calicausal::GradientBundle&>(analytic));
  FdReport report;
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    const double saved = *ptrs[i];
    *ptrs[i] = saved + h;
    const double up = loss_value();
    *ptrs[i] = saved - h;
    const double down = loss_value();
    *ptrs[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double a = *gptrs[i];
    if (std::abs(a - fd) <= 1e-9) {
      ++report.checked;
      continue;
    }
    const double rel = std::abs(a - fd) / (std::abs(a) + 1e-8);
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_fd = fd;
    }
    ++report.checked;
  }
  return report;
}

}  // namespace fdcheck
