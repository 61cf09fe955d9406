// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/optim.hpp"

#include <cmath>

namespace riformer {

OptimState make_optim_state(const std::vector<ParamRef>& params, const AdamWConfig& config) {
  OptimState state;
  state.config = config;
  for (const auto& p : params) {
    state.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
    state.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
  }
  return state;
}

void adamw_step(const std::vector<ParamRef>& params, OptimState& state) {
  if (params.size() != state.m.size()) {
    throw ShapeError("adamw_step: " + std::to_string(params.size()) + " params but state holds " +
                     std::to_string(state.m.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (static_cast<std::int64_t>(state.m[i].size()) != params[i].tensor.numel()) {
      throw ShapeError("adamw_step: moment buffer does not match " + params[i].name);
    }
  }
  const AdamWConfig& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(static_cast<double>(c.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(c.beta2), static_cast<double>(state.step));
  const float step_size = static_cast<float>(c.lr / bc1);
  const float bc2_sqrt = static_cast<float>(std::sqrt(bc2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    auto w = t.data();
    const bool has = t.has_grad();
    const float* g = has ? t.grad().data() : nullptr;
    const float decay = params[i].decay ? 1.0f - c.lr * c.weight_decay : 1.0f;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const float gj = has ? g[j] : 0.0f;
      m[j] = c.beta1 * m[j] + (1.0f - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0f - c.beta2) * gj * gj;
      w[j] *= decay;
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) / bc2_sqrt + c.eps);
    }
  }
}

}  // namespace riformer
