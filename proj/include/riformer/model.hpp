// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "riformer/optim.hpp"
#include "riformer/tape.hpp"
#include "riformer/tensor.hpp"

namespace riformer {

enum class MixerKind { pooling, affine, identity };

const char* mixer_name(MixerKind kind);
MixerKind parse_mixer(const std::string& name);

// Patch embedding into the stage followed by `depth` blocks of width `dim`.
struct StageSpec {
  int depth = 1;
  int dim = 16;
  float mlp_ratio = 4.0f;
  int patch = 3;
  int stride = 2;
  int padding = 1;

  bool operator==(const StageSpec&) const = default;
};

struct ModelSpec {
  std::vector<StageSpec> stages;
  MixerKind mixer = MixerKind::identity;
  int pool_size = 3;
  int num_classes = 10;
  float layer_scale_init = 1e-5f;
  float drop_path_rate = 0.0f;
  int input_resolution = 64;
  int in_channels = 3;

  bool operator==(const ModelSpec&) const = default;

  // Depths [1,1,3,1], dims [16,32,64,128], 7/4 stem, 3/2 downsampling, 64x64 input.
  static ModelSpec nano(MixerKind mixer);

  int total_blocks() const;
  int stage_of_block(int block) const;
  // Spatial side after each stage for input_resolution.
  std::vector<int> stage_resolutions() const;
  // Throws ShapeError naming the offending field.
  void validate() const;
  // Same architecture apart from the mixer.
  bool isomorphic(const ModelSpec& other) const;
};

struct BlockWeights {
  int stage = 0;
  int dim = 0;
  Tensor norm1_gamma, norm1_beta;
  Tensor s, t;  // affine mixer only, absent once deployed
  Tensor norm2_gamma, norm2_beta;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Tensor layer_scale_1, layer_scale_2;
};

struct Model {
  ModelSpec spec;
  // Affine models after switch_to_deploy: norm1 holds the fused norm and the
  // first sub-block is x + ls1 * norm(x).
  bool deployed = false;
  std::vector<Tensor> embed_w, embed_b;
  std::vector<BlockWeights> blocks;
  Tensor norm_gamma, norm_beta;
  Tensor head_w, head_b;

  // Stable names, e.g. "blocks.3.mixer.s", "blocks.0.norm_reparam.gamma".
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  std::vector<ParamRef> parameters() const;  // decay only on rank >= 2
  std::int64_t parameter_count() const;
  void set_requires_grad(bool on) const;
  void zero_grad() const;
  Model clone() const;
};

Model build_model(const ModelSpec& spec, std::uint64_t seed);

// Cumulative component sets used by the latency breakdown. The mixer level
// includes the first residual add.
enum class Components { embed, norm, mixer, full };

struct BlockCapture {
  Tensor input;      // block input
  Tensor norm_out;   // norm1 output (fused norm output when deployed)
  Tensor mixer_out;  // mixer branch before layer scale
  Tensor output;     // block output
};

struct ForwardOptions {
  Tape* tape = nullptr;
  bool training = false;            // enables drop path
  std::mt19937_64* rng = nullptr;   // required when drop path is active
  std::set<int> capture;            // block indices to record
  bool capture_stages = false;      // record stage outputs
  Components components = Components::full;
};

struct ForwardResult {
  Tensor features;  // last stage output, before the final norm
  Tensor logits;
  std::map<int, BlockCapture> blocks;
  std::vector<Tensor> stages;
};

ForwardResult forward(const Model& model, const Tensor& x, const ForwardOptions& options = {});
Tensor forward_features(const Model& model, const Tensor& x, const ForwardOptions& options = {});
Tensor logits(const Model& model, const Tensor& x);

}  // namespace riformer
