// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/config.hpp"

#include <fstream>
#include <set>

namespace riformer {

using nlohmann::json;
using nlohmann::ordered_json;

const char* recipe_name(Recipe recipe) {
  switch (recipe) {
    case Recipe::ce: return "ce";
    case Recipe::hard_kd: return "hard_kd";
    case Recipe::soft_kd: return "soft_kd";
    case Recipe::soft_kd_mi: return "soft_kd_mi";
  }
  return "?";
}

Recipe parse_recipe(const std::string& name) {
  if (name == "ce") return Recipe::ce;
  if (name == "hard_kd") return Recipe::hard_kd;
  if (name == "soft_kd") return Recipe::soft_kd;
  if (name == "soft_kd_mi") return Recipe::soft_kd_mi;
  throw ConfigError("unknown recipe '" + name + "' (expected ce, hard_kd, soft_kd or soft_kd_mi)");
}

float TrainConfig::peak_lr() const {
  return lr.value_or(static_cast<float>(batch_size) / 1024.0f * 1e-3f);
}

namespace {

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Block {
 public:
  Block(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key " + where_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

ordered_json stage_to_json(const StageSpec& st) {
  ordered_json j;
  j["depth"] = st.depth;
  j["dim"] = st.dim;
  j["mlp_ratio"] = st.mlp_ratio;
  j["patch"] = st.patch;
  j["stride"] = st.stride;
  j["padding"] = st.padding;
  return j;
}

}  // namespace

ordered_json spec_to_json(const ModelSpec& spec) {
  ordered_json j;
  j["stages"] = ordered_json::array();
  for (const auto& st : spec.stages) j["stages"].push_back(stage_to_json(st));
  j["mixer"] = mixer_name(spec.mixer);
  j["pool_size"] = spec.pool_size;
  j["num_classes"] = spec.num_classes;
  j["layer_scale_init"] = spec.layer_scale_init;
  j["drop_path_rate"] = spec.drop_path_rate;
  j["input_resolution"] = spec.input_resolution;
  j["in_channels"] = spec.in_channels;
  return j;
}

ModelSpec spec_from_json(const json& j) {
  Block b(j, "model");
  std::string preset = "nano";
  b.get("preset", preset);
  if (preset != "nano") throw ConfigError("model.preset: unknown preset '" + preset + "'");
  std::string mixer = "identity";
  b.get("mixer", mixer);
  ModelSpec spec;
  try {
    spec = ModelSpec::nano(parse_mixer(mixer));
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("model.mixer: ") + e.what());
  }
  if (b.has("stages")) {
    const json& arr = b.at("stages");
    if (!arr.is_array()) throw ConfigError("model.stages must be an array");
    spec.stages.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Block sb(arr[i], "model.stages[" + std::to_string(i) + "]");
      StageSpec st;
      if (i == 0) {
        st.patch = 7;
        st.stride = 4;
        st.padding = 2;
      }
      sb.get("depth", st.depth);
      sb.get("dim", st.dim);
      sb.get("mlp_ratio", st.mlp_ratio);
      sb.get("patch", st.patch);
      sb.get("stride", st.stride);
      sb.get("padding", st.padding);
      sb.finish();
      spec.stages.push_back(st);
    }
  }
  b.get("pool_size", spec.pool_size);
  b.get("num_classes", spec.num_classes);
  b.get("layer_scale_init", spec.layer_scale_init);
  b.get("drop_path_rate", spec.drop_path_rate);
  b.get("input_resolution", spec.input_resolution);
  b.get("in_channels", spec.in_channels);
  b.finish();
  try {
    spec.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
    if (data.source == "synthetic") {
      data.synth.validate();
      if (data.synth.resolution != model.input_resolution) {
        throw ConfigError("data.resolution must equal model.input_resolution");
      }
      if (data.synth.num_classes != model.num_classes) {
        throw ConfigError("data.num_classes must equal model.num_classes");
      }
    } else if (data.source == "cifar10_binary") {
      if (data.path.empty()) throw ConfigError("data.path is required for cifar10_binary");
      if (model.num_classes != 10) throw ConfigError("cifar10_binary needs model.num_classes = 10");
      if (model.input_resolution != 32) throw ConfigError("cifar10_binary needs model.input_resolution = 32");
    } else {
      throw ConfigError("data.source must be synthetic or cifar10_binary");
    }
    if (data.val_per_class < 1) throw ConfigError("data.val_per_class must be >= 1");
    for (float s : data.norm.stddev) {
      if (!(s > 0.0f)) throw ConfigError("data.std entries must be > 0");
    }
    if (train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(train.peak_lr() > 0.0f)) throw ConfigError("train.lr must be > 0");
    if (train.min_lr < 0.0f || train.min_lr > train.peak_lr()) throw ConfigError("train.min_lr must be in [0, lr]");
    if (train.warmup_epochs < 0 || train.warmup_epochs >= train.epochs) {
      throw ConfigError("train.warmup_epochs must be in [0, epochs)");
    }
    if (train.weight_decay < 0.0f) throw ConfigError("train.weight_decay must be >= 0");
    if (train.label_smoothing < 0.0f || train.label_smoothing >= 1.0f) {
      throw ConfigError("train.label_smoothing must be in [0, 1)");
    }
    const bool kd = train.recipe != Recipe::ce;
    if ((kd || train.init_from_teacher) && train.teacher.empty()) {
      throw ConfigError(std::string("recipe ") + recipe_name(train.recipe) + " needs train.teacher");
    }
    if (train.init_from_teacher && model.mixer != MixerKind::affine) {
      throw ConfigError("train.init_from_teacher needs an affine student");
    }
    if (train.recipe == Recipe::soft_kd_mi) {
      if (imitation.total_epochs != train.epochs) {
        throw ConfigError("imitation.total_epochs must equal train.epochs");
      }
      imitation.validate(model);
    }
    if (bench.batch_size < 1 || bench.timed_runs < 1 || bench.repeats < 1 || bench.warmup_runs < 0) {
      throw ConfigError("bench: batch_size, timed_runs and repeats must be >= 1, warmup_runs >= 0");
    }
    if (bench.repeats % 2 == 0) throw ConfigError("bench.repeats must be odd");
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
}

ordered_json config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["model"] = spec_to_json(c.model);
  ordered_json d;
  d["source"] = c.data.source;
  d["seed"] = c.data.synth.seed;
  d["num_classes"] = c.data.synth.num_classes;
  d["samples_per_class"] = c.data.synth.samples_per_class;
  d["val_per_class"] = c.data.val_per_class;
  d["resolution"] = c.data.synth.resolution;
  d["noise"] = c.data.synth.noise;
  d["path"] = c.data.path;
  d["mean"] = c.data.norm.mean;
  d["std"] = c.data.norm.stddev;
  j["data"] = d;
  ordered_json t;
  t["epochs"] = c.train.epochs;
  t["batch_size"] = c.train.batch_size;
  t["lr"] = c.train.peak_lr();
  t["min_lr"] = c.train.min_lr;
  t["warmup_epochs"] = c.train.warmup_epochs;
  t["weight_decay"] = c.train.weight_decay;
  t["seed"] = c.train.seed;
  t["label_smoothing"] = c.train.label_smoothing;
  t["recipe"] = recipe_name(c.train.recipe);
  t["init_from_teacher"] = c.train.init_from_teacher;
  t["teacher"] = c.train.teacher;
  t["out"] = c.train.out;
  j["train"] = t;
  ordered_json im;
  im["lambda1_b"] = c.imitation.lambda1_b;
  im["lambda2_b"] = c.imitation.lambda2_b;
  im["lambda3_b"] = c.imitation.lambda3_b;
  im["tau"] = c.imitation.tau;
  im["layer_count"] = c.imitation.layer_count;
  im["layers"] = c.imitation.layers;
  im["feat_epochs"] = c.imitation.feat_epochs;
  im["rel_epochs"] = c.imitation.rel_epochs;
  im["total_epochs"] = c.imitation.total_epochs;
  im["use_loss_in"] = c.imitation.use_loss_in;
  im["use_hard"] = c.imitation.use_hard;
  im["use_gt_label"] = c.imitation.use_gt_label;
  j["imitation"] = im;
  ordered_json b;
  b["batch_size"] = c.bench.batch_size;
  b["resolution"] = c.bench.resolution;
  b["warmup_runs"] = c.bench.warmup_runs;
  b["timed_runs"] = c.bench.timed_runs;
  b["repeats"] = c.bench.repeats;
  j["bench"] = b;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  Block top(j, "config");
  ExperimentConfig c;
  if (top.has("model")) c.model = spec_from_json(top.at("model"));
  if (top.has("data")) {
    Block b(top.at("data"), "data");
    b.get("source", c.data.source);
    b.get("seed", c.data.synth.seed);
    b.get("num_classes", c.data.synth.num_classes);
    b.get("samples_per_class", c.data.synth.samples_per_class);
    b.get("val_per_class", c.data.val_per_class);
    b.get("resolution", c.data.synth.resolution);
    b.get("noise", c.data.synth.noise);
    b.get("path", c.data.path);
    b.get("mean", c.data.norm.mean);
    b.get("std", c.data.norm.stddev);
    b.finish();
  } else {
    c.data.synth.resolution = c.model.input_resolution;
    c.data.synth.num_classes = c.model.num_classes;
  }
  bool total_given = false;
  if (top.has("train")) {
    Block b(top.at("train"), "train");
    b.get("epochs", c.train.epochs);
    b.get("batch_size", c.train.batch_size);
    float lr = 0.0f;
    b.get("lr", lr);
    if (b.has("lr")) c.train.lr = lr;
    b.get("min_lr", c.train.min_lr);
    b.get("warmup_epochs", c.train.warmup_epochs);
    b.get("weight_decay", c.train.weight_decay);
    b.get("seed", c.train.seed);
    b.get("label_smoothing", c.train.label_smoothing);
    std::string recipe = recipe_name(c.train.recipe);
    b.get("recipe", recipe);
    c.train.recipe = parse_recipe(recipe);
    b.get("init_from_teacher", c.train.init_from_teacher);
    b.get("teacher", c.train.teacher);
    b.get("out", c.train.out);
    b.finish();
  }
  if (top.has("imitation")) {
    Block b(top.at("imitation"), "imitation");
    b.get("lambda1_b", c.imitation.lambda1_b);
    b.get("lambda2_b", c.imitation.lambda2_b);
    b.get("lambda3_b", c.imitation.lambda3_b);
    b.get("tau", c.imitation.tau);
    b.get("layer_count", c.imitation.layer_count);
    b.get("layers", c.imitation.layers);
    b.get("feat_epochs", c.imitation.feat_epochs);
    b.get("rel_epochs", c.imitation.rel_epochs);
    total_given = b.has("total_epochs");
    b.get("total_epochs", c.imitation.total_epochs);
    b.get("use_loss_in", c.imitation.use_loss_in);
    b.get("use_hard", c.imitation.use_hard);
    b.get("use_gt_label", c.imitation.use_gt_label);
    b.finish();
  }
  if (!total_given) c.imitation.total_epochs = c.train.epochs;
  if (top.has("bench")) {
    Block b(top.at("bench"), "bench");
    b.get("batch_size", c.bench.batch_size);
    b.get("resolution", c.bench.resolution);
    b.get("warmup_runs", c.bench.warmup_runs);
    b.get("timed_runs", c.bench.timed_runs);
    b.get("repeats", c.bench.repeats);
    b.finish();
  }
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace riformer
