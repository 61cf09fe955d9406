// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "riformer/config.hpp"
#include "riformer/data.hpp"
#include "riformer/imitation.hpp"
#include "riformer/model.hpp"

namespace riformer {

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  std::optional<double> loss_soft, loss_in_prime, loss_out, loss_rel;
  double val_top1 = 0.0;
};

struct TrainOptions {
  std::function<void(const EpochLog&)> on_epoch;
  int eval_batch = 100;
  // Stop after this many epochs without changing the schedule; <= 0 runs all.
  int max_epochs = 0;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  double initial_val_top1 = 0.0;  // before the first update
};

// Index of the largest entry; ties go to the lower index.
int argmax(std::span<const float> row);

std::vector<int> predict(const Model& model, const Tensor& images, int batch = 100);
double evaluate(const Model& model, const Dataset& data, int batch = 100);

float learning_rate(const TrainConfig& cfg, std::int64_t step, std::int64_t steps_per_epoch);

// Trains a copy of `init`. KD recipes and init_from_teacher need `teacher`,
// which is never modified.
TrainResult train(const Model& init, const Model* teacher, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg, const ImitationConfig& imitation, const TrainOptions& options = {});

std::string log_csv(const std::vector<EpochLog>& log);
void write_log_csv(const std::string& path, const std::vector<EpochLog>& log);

}  // namespace riformer
