// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <set>
#include <string>
#include <vector>

#include "riformer/model.hpp"

namespace riformer {

// Loss weights are stored as lambda * batch_size; the effective weight is
// value / batch_size.
struct ImitationConfig {
  float lambda1_b = 0.0001f;  // block output term
  float lambda2_b = 0.001f;   // mixer output term
  float lambda3_b = 1.0f;     // relation term
  float tau = 1.0f;
  int layer_count = 4;
  std::vector<int> layers;  // explicit selection; empty means select_layers(layer_count)
  int feat_epochs = 40;
  int rel_epochs = 10;
  int total_epochs = 60;
  bool use_loss_in = false;  // also match norm1 outputs with weight lambda1
  bool use_hard = false;
  bool use_gt_label = false;

  void validate(const ModelSpec& spec) const;
  std::vector<int> resolved_layers(const ModelSpec& spec) const;
};

enum class Phase { feat, rel, soft_only };
Phase phase_for_epoch(int epoch, const ImitationConfig& cfg);
const char* phase_name(Phase phase);

struct LossReport {
  double soft = 0.0;
  double in = 0.0;
  double in_prime = 0.0;
  double out = 0.0;
  double rel = 0.0;
  double total = 0.0;
  std::set<std::string> active;
};

// Elementwise mean of squared differences.
Tensor loss_in(Tape* tape, const Tensor& student_norm_out, const Tensor& teacher_norm_out);
Tensor loss_in_prime(Tape* tape, const Tensor& student_block_out, const Tensor& teacher_block_out);
Tensor loss_out(Tape* tape, const Tensor& student_mixer_out, const Tensor& teacher_mixer_out);
// Squared Frobenius distance of relation matrices over N * (HW)^2.
Tensor loss_rel(Tape* tape, const Tensor& student_out, const Tensor& teacher_out);
// tau^2 * KL(softmax(teacher / tau) || softmax(student / tau)), batch mean.
Tensor loss_soft(Tape* tape, const Tensor& student_logits, const Tensor& teacher_logits, float tau);

// Argmax of each row, ties to the lower index.
std::vector<int> teacher_labels(const Tensor& teacher_logits);

struct ImitationLoss {
  Tensor total;
  Tensor soft;  // the logit term alone (hard CE when use_hard)
  LossReport report;
};

// Sums per-layer terms over cfg.layers (or every captured student block when
// empty) and gates them by phase. Captures must hold those layers for both
// models.
ImitationLoss total_loss(Tape* tape, const ForwardResult& student, const ForwardResult& teacher, int epoch,
                         const ImitationConfig& cfg, int batch_size);

// count == 4 on a 4-stage model picks the last block of each stage; other
// counts take ceil(i * B / count) - 1 for i = 1..count.
std::vector<int> select_layers(const ModelSpec& spec, int count);

// Copies every tensor except the mixer parameters from an isomorphic pooling
// teacher into an affine student.
void load_from_teacher(Model& student, const Model& teacher);

}  // namespace riformer
