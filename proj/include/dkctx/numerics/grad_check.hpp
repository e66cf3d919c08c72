// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dkctx/numerics/ops.hpp"

namespace dkctx {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Denominator floor for the relative error, so vanishing gradients are
  // judged on absolute agreement instead of amplified noise.
  double abs_floor = 1e-6;
  // 0 checks every element; otherwise a seeded sample per parameter.
  std::size_t max_elements_per_param = 0;
  std::uint64_t seed = 0;
  // Empty means every parameter in the store.
  std::vector<std::string> params;
};

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<ParamGradError> params;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Builds a scalar loss on the given tape from parameters in the store.
using ScalarFn = std::function<Var(Tape&, ParamStore&)>;

namespace detail {

inline double eval_scalar(const ScalarFn& f, ParamStore& store) {
  Tape tape(/*record=*/false);
  const double v = f(tape, store).item();
  if (!std::isfinite(v)) throw Error("grad_check: objective is not finite");
  return v;
}

}  // namespace detail

/// Compares reverse-mode gradients against central differences
/// (f(x+eps) - f(x-eps)) / (2 eps) for every (or a sample of) parameter
/// element. Parameter values are restored afterwards; gradients are left
/// holding the analytic result.
inline GradCheckReport grad_check(const ScalarFn& f, ParamStore& store, const GradCheckOptions& opt = {}) {
  if (!(opt.eps > 0.0 && opt.eps <= 1e-2)) throw Error("grad_check: eps must be in (0, 1e-2]");
  store.zero_grad();
  {
    Tape tape;
    Var loss = f(tape, store);
    if (!std::isfinite(loss.item())) throw Error("grad_check: objective is not finite");
    tape.backward(loss);
  }
  const std::vector<std::string> names = opt.params.empty() ? store.names() : opt.params;
  Rng rng(opt.seed);
  GradCheckReport report;
  for (const std::string& name : names) {
    Parameter& p = store.get(name);
    ParamGradError err{name};
    std::vector<std::size_t> elems;
    if (opt.max_elements_per_param == 0 || opt.max_elements_per_param >= p.value.size()) {
      elems.resize(p.value.size());
      for (std::size_t i = 0; i < elems.size(); ++i) elems[i] = i;
    } else {
      elems = rng.sample_indices(p.value.size(), opt.max_elements_per_param);
    }
    for (std::size_t i : elems) {
      const double orig = p.value[i];
      p.value[i] = orig + opt.eps;
      const double fp = detail::eval_scalar(f, store);
      p.value[i] = orig - opt.eps;
      const double fm = detail::eval_scalar(f, store);
      p.value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double analytic = p.grad[i];
      const double abs_err = std::abs(analytic - numeric);
      const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), opt.abs_floor});
      err.max_abs_error = std::max(err.max_abs_error, abs_err);
      err.max_rel_error = std::max(err.max_rel_error, rel);
      ++err.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, err.max_rel_error);
    report.params.push_back(std::move(err));
  }
  report.passed = report.max_rel_error < opt.tol;
  return report;
}

}  // namespace dkctx
