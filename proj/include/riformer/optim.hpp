// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "riformer/tensor.hpp"

namespace riformer {

struct AdamWConfig {
  float lr = 1e-3f;
  float weight_decay = 0.05f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct ParamRef {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

struct OptimState {
  AdamWConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

OptimState make_optim_state(const std::vector<ParamRef>& params, const AdamWConfig& config);

// One decoupled-weight-decay Adam update using each tensor's grad buffer
// (a missing buffer counts as zero). state.config.lr is the current rate.
void adamw_step(const std::vector<ParamRef>& params, OptimState& state);

}  // namespace riformer
