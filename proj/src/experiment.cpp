// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "riformer/checkpoint.hpp"

namespace riformer {

namespace fs = std::filesystem;

Splits load_splits(const DataConfig& data) {
  Splits s;
  if (data.source == "synthetic") {
    s.train = synth_dataset(data.synth, Split::train, data.norm);
    SynthSpec val = data.synth;
    val.samples_per_class = data.val_per_class;
    s.val = synth_dataset(val, Split::val, data.norm);
    return s;
  }
  if (data.source != "cifar10_binary") throw DataError("unknown data source '" + data.source + "'");
  std::vector<std::string> train_files;
  if (fs::is_directory(data.path)) {
    for (const auto& e : fs::directory_iterator(data.path)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("data_batch_", 0) == 0 && e.path().extension() == ".bin") train_files.push_back(e.path().string());
    }
  }
  std::sort(train_files.begin(), train_files.end());
  const fs::path test = fs::path(data.path) / "test_batch.bin";
  if (train_files.empty()) throw DataError("no data_batch_*.bin files under " + data.path);
  if (!fs::exists(test)) throw DataError("missing " + test.string());
  s.train = load_cifar10_binary(train_files, data.norm);
  s.val = load_cifar10_binary({test.string()}, data.norm);
  return s;
}

TrainResult run_experiment(const ExperimentConfig& cfg, const Splits& splits, const TrainOptions& options,
                           const Model* teacher) {
  cfg.validate();
  std::optional<Model> loaded;
  const bool needs_teacher = cfg.train.recipe != Recipe::ce || cfg.train.init_from_teacher;
  if (needs_teacher && teacher == nullptr) {
    loaded = load_checkpoint(cfg.train.teacher).model;
    teacher = &*loaded;
  }
  const Model init = build_model(cfg.model, cfg.train.seed);
  return train(init, needs_teacher ? teacher : nullptr, splits.train, splits.val, cfg.train, cfg.imitation, options);
}

void write_run(const std::string& dir, const ExperimentConfig& cfg, const TrainResult& result) {
  fs::create_directories(dir);
  CheckpointMeta meta;
  meta.seed = cfg.train.seed;
  meta.recipe = recipe_name(cfg.train.recipe);
  meta.epoch = static_cast<int>(result.log.size());
  save_checkpoint(result.model, meta, (fs::path(dir) / "model.ckpt").string());
  write_log_csv((fs::path(dir) / "log.csv").string(), result.log);
  std::ofstream out(fs::path(dir) / "config.json");
  if (!out) throw std::runtime_error("cannot write " + (fs::path(dir) / "config.json").string());
  out << config_to_json(cfg).dump(2) << '\n';
}

}  // namespace riformer
