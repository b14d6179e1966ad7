#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dgfn/tensor.hpp"

namespace dgfn {

/// Bias-corrected Adam over a fixed list of named parameters. Moments are
/// lazily shaped on the first step and then mirror the parameter shapes.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;

  std::vector<std::string> names;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

inline void adam_step(std::span<Tensor* const> params,
                      std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size()) throw Error("adam_step: size mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor::zeros(p->shape));
      state.v.push_back(Tensor::zeros(p->shape));
    }
    if (state.names.empty()) state.names.resize(params.size(), "?");
  }
  if (state.m.size() != params.size()) throw Error("adam_step: state size mismatch");

  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g) || !p.same_shape(state.m[i])) {
      throw Error("adam_step: shape mismatch for " + state.names[i]);
    }
    if (!g.all_finite()) {
      throw Error("adam_step: non-finite gradient for " + state.names[i]);
    }
    for (std::size_t k = 0; k < p.numel(); ++k) {
      double& m = state.m[i].data[k];
      double& v = state.v[i].data[k];
      m = state.beta1 * m + (1.0 - state.beta1) * g.data[k];
      v = state.beta2 * v + (1.0 - state.beta2) * g.data[k] * g.data[k];
      const double mhat = m / c1;
      const double vhat = v / c2;
      p.data[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace dgfn
