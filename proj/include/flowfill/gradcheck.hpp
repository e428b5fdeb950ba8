#pragma once

// Central finite-difference check of tape gradients against every scalar of
// a parameter store.

#include "flowfill/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace flowfill {

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t passed = 0;
  double max_rel_error = 0.0;
  std::string worst;  // parameter name and index of the largest error

  double pass_fraction() const { return checked ? static_cast<double>(passed) / static_cast<double>(checked) : 1.0; }
};

// rel = |analytic - numeric| / max(|analytic|, |numeric|, floor)
inline double gradient_rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// loss_fn must be deterministic and build its graph on the given tape.
inline GradCheckResult grad_check(ParamStore& ps, const std::function<Var(Tape&)>& loss_fn, double step = 1e-4,
                                  double tol = 1e-3) {
  ps.zero_grad();
  {
    Tape t;
    t.backward(loss_fn(t));
  }
  auto eval = [&] {
    Tape t(false);
    return loss_fn(t).scalar();
  };
  GradCheckResult r;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    Param& p = ps.at(k);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& w = p.value.data()[i];
      const double saved = w;
      w = saved + step;
      const double up = eval();
      w = saved - step;
      const double down = eval();
      w = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = gradient_rel_error(p.grad.data()[i], numeric);
      ++r.checked;
      if (err < tol) ++r.passed;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

}  // namespace flowfill
