// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "riformer/model.hpp"

namespace riformer {

struct FusedNorm {
  Tensor gamma_prime;
  Tensor beta_prime;
};

// gamma' = gamma * (s - 1), beta' = beta * (s - 1) + t
FusedNorm fuse_affine(const Tensor& gamma, const Tensor& beta, const Tensor& s, const Tensor& t);

// Returns the deploy form; the input model is left untouched. Every tensor
// other than norm1 and the mixer is copied bit-for-bit.
Model switch_to_deploy(const Model& model);

struct EquivalenceReport {
  int samples = 0;
  double max_abs_diff = 0.0;
  double mean_abs_diff = 0.0;
  double tolerance = 0.0;
  bool pass = false;

  std::string to_json() const;
};

// Random N(0,1) probes; compares logits and every block output.
EquivalenceReport verify_equivalence(const Model& train_form, const Model& deploy_form, int n_probes, double tol,
                                     std::uint64_t seed = 0);

}  // namespace riformer
