// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "riformer/data.hpp"
#include "riformer/imitation.hpp"
#include "riformer/model.hpp"

namespace riformer {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Recipe { ce, hard_kd, soft_kd, soft_kd_mi };
const char* recipe_name(Recipe recipe);
Recipe parse_recipe(const std::string& name);

struct DataConfig {
  std::string source = "synthetic";  // or "cifar10_binary"
  SynthSpec synth;
  int val_per_class = 30;
  std::string path;  // directory holding data_batch_*.bin / test_batch.bin
  Normalization norm;
};

struct TrainConfig {
  int epochs = 60;
  int batch_size = 32;
  std::optional<float> lr;  // peak rate; default batch / 1024 * 1e-3
  float min_lr = 1e-5f;
  int warmup_epochs = 5;
  float weight_decay = 0.05f;
  std::uint64_t seed = 0;
  float label_smoothing = 0.1f;
  Recipe recipe = Recipe::ce;
  bool init_from_teacher = false;
  std::string teacher;  // checkpoint path
  std::string out = "run";

  float peak_lr() const;
};

struct BenchConfig {
  int batch_size = 32;
  int resolution = 64;
  int warmup_runs = 10;
  int timed_runs = 30;
  int repeats = 3;
};

struct ExperimentConfig {
  ModelSpec model = ModelSpec::nano(MixerKind::identity);
  DataConfig data;
  TrainConfig train;
  ImitationConfig imitation;
  BenchConfig bench;

  void validate() const;
};

nlohmann::ordered_json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
// Unknown keys are rejected. Missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

}  // namespace riformer
