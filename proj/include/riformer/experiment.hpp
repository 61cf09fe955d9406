// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>

#include "riformer/config.hpp"
#include "riformer/data.hpp"
#include "riformer/model.hpp"
#include "riformer/train.hpp"

namespace riformer {

struct Splits {
  Dataset train;
  Dataset val;
};

// Synthetic splits, or CIFAR-10 binaries from a directory (data_batch_*.bin, test_batch.bin).
Splits load_splits(const DataConfig& data);

// Trains the configured model; loads the teacher checkpoint when the recipe needs one.
TrainResult run_experiment(const ExperimentConfig& cfg, const Splits& splits, const TrainOptions& options = {},
                           const Model* teacher = nullptr);

// Writes model.ckpt, log.csv and config.json under dir.
void write_run(const std::string& dir, const ExperimentConfig& cfg, const TrainResult& result);

}  // namespace riformer
