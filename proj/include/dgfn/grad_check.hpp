#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dgfn/tensor.hpp"

namespace dgfn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double tape_grad = 0.0;
  double fd_grad = 0.0;
};

struct LossWithGrads {
  double value = 0.0;
  std::vector<Tensor> grads;  // aligned with the parameter list
};

/// Central finite-difference check of tape gradients. `fn` evaluates the
/// loss at the current parameter values and returns the tape gradients for
/// every listed parameter; the checker perturbs each component in place and
/// compares. Relative error uses max(1, |a|, |b|) as denominator so that
/// near-zero gradients are compared absolutely.
inline GradCheckReport grad_check(
    std::span<Tensor* const> params, std::span<const std::string> names,
    const std::function<LossWithGrads()>& fn, double eps) {
  if (eps < 1e-7 || eps > 1e-4) throw Error("grad_check: eps out of [1e-7, 1e-4]");
  if (!names.empty() && names.size() != params.size()) {
    throw Error("grad_check: name/param mismatch");
  }
  const LossWithGrads base = fn();
  if (base.grads.size() != params.size()) {
    throw Error("grad_check: gradient count mismatch");
  }
  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    for (std::size_t k = 0; k < p.numel(); ++k) {
      const double saved = p.data[k];
      p.data[k] = saved + eps;
      const double up = fn().value;
      p.data[k] = saved - eps;
      const double down = fn().value;
      p.data[k] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = base.grads[i].data[k];
      const double denom = std::max({1.0, std::abs(ad), std::abs(fd)});
      const double rel = std::abs(ad - fd) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = names.empty() ? std::to_string(i) : names[i];
        report.worst_index = k;
        report.tape_grad = ad;
        report.fd_grad = fd;
      }
    }
  }
  return report;
}

}  // namespace dgfn
