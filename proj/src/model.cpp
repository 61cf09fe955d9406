// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/model.hpp"

#include <cmath>

#include "riformer/ops.hpp"

namespace riformer {

const char* mixer_name(MixerKind kind) {
  switch (kind) {
    case MixerKind::pooling: return "pooling";
    case MixerKind::affine: return "affine";
    case MixerKind::identity: return "identity";
  }
  return "?";
}

MixerKind parse_mixer(const std::string& name) {
  if (name == "pooling") return MixerKind::pooling;
  if (name == "affine") return MixerKind::affine;
  if (name == "identity") return MixerKind::identity;
  throw ShapeError("unknown mixer '" + name + "' (expected pooling, affine or identity)");
}

ModelSpec ModelSpec::nano(MixerKind mixer) {
  ModelSpec spec;
  spec.mixer = mixer;
  const int depths[4] = {1, 1, 3, 1};
  const int dims[4] = {16, 32, 64, 128};
  for (int i = 0; i < 4; ++i) {
    StageSpec st;
    st.depth = depths[i];
    st.dim = dims[i];
    if (i == 0) {
      st.patch = 7;
      st.stride = 4;
      st.padding = 2;
    }
    spec.stages.push_back(st);
  }
  return spec;
}

int ModelSpec::total_blocks() const {
  int n = 0;
  for (const auto& st : stages) n += st.depth;
  return n;
}

int ModelSpec::stage_of_block(int block) const {
  int first = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (block < first + stages[i].depth) return static_cast<int>(i);
    first += stages[i].depth;
  }
  throw ShapeError("block index " + std::to_string(block) + " out of range");
}

std::vector<int> ModelSpec::stage_resolutions() const {
  std::vector<int> out;
  int r = input_resolution;
  for (const auto& st : stages) {
    r = (r + 2 * st.padding - st.patch) / st.stride + 1;
    out.push_back(r);
  }
  return out;
}

void ModelSpec::validate() const {
  if (stages.size() != 4) throw ShapeError("model: exactly 4 stages required, got " + std::to_string(stages.size()));
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    const std::string where = "model.stages[" + std::to_string(i) + "]";
    if (st.depth < 1) throw ShapeError(where + ".depth must be >= 1");
    if (st.dim < 1) throw ShapeError(where + ".dim must be >= 1");
    if (!(st.mlp_ratio > 0.0f)) throw ShapeError(where + ".mlp_ratio must be > 0");
    if (st.patch < 1 || st.stride < 1 || st.padding < 0) throw ShapeError(where + ": bad patch/stride/padding");
    if (static_cast<int>(std::lround(st.dim * st.mlp_ratio)) < 1) throw ShapeError(where + ": empty MLP");
  }
  if (mixer == MixerKind::pooling && (pool_size < 1 || pool_size % 2 == 0)) {
    throw ShapeError("model.pool_size must be odd and >= 1");
  }
  if (num_classes < 1) throw ShapeError("model.num_classes must be >= 1");
  if (in_channels < 1) throw ShapeError("model.in_channels must be >= 1");
  if (!(drop_path_rate >= 0.0f && drop_path_rate < 1.0f)) throw ShapeError("model.drop_path_rate must be in [0,1)");
  int total_stride = 1;
  int r = input_resolution;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    total_stride *= st.stride;
    const int span = r + 2 * st.padding - st.patch;
    if (span < 0) {
      throw ShapeError("model.input_resolution " + std::to_string(input_resolution) + " is too small for stage " +
                       std::to_string(i));
    }
    r = span / st.stride + 1;
  }
  if (input_resolution < 1 || input_resolution % total_stride != 0) {
    throw ShapeError("model.input_resolution " + std::to_string(input_resolution) +
                     " must be divisible by the cumulative stride " + std::to_string(total_stride));
  }
}

bool ModelSpec::isomorphic(const ModelSpec& other) const {
  return stages == other.stages && num_classes == other.num_classes && input_resolution == other.input_resolution &&
         in_channels == other.in_channels;
}

namespace {

int hidden_dim(const StageSpec& st) { return static_cast<int>(std::lround(st.dim * st.mlp_ratio)); }

Tensor trunc_normal(Shape shape, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    float x;
    do {
      x = dist(rng);
    } while (std::fabs(x) > 2.0f * stddev);
    v = x;
  }
  return t;
}

}  // namespace

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Model m;
  m.spec = spec;
  int in_c = spec.in_channels;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const auto& st = spec.stages[i];
    m.embed_w.push_back(trunc_normal(Shape{st.dim, in_c, st.patch, st.patch}, 0.02f, rng));
    m.embed_b.emplace_back(Shape{st.dim});
    for (int d = 0; d < st.depth; ++d) {
      BlockWeights b;
      b.stage = static_cast<int>(i);
      b.dim = st.dim;
      b.norm1_gamma = Tensor(Shape{st.dim}, 1.0f);
      b.norm1_beta = Tensor(Shape{st.dim});
      if (spec.mixer == MixerKind::affine) {
        b.s = Tensor(Shape{st.dim}, 1.0f);
        b.t = Tensor(Shape{st.dim});
      }
      b.norm2_gamma = Tensor(Shape{st.dim}, 1.0f);
      b.norm2_beta = Tensor(Shape{st.dim});
      const int h = hidden_dim(st);
      b.mlp_w1 = trunc_normal(Shape{h, st.dim}, 0.02f, rng);
      b.mlp_b1 = Tensor(Shape{h});
      b.mlp_w2 = trunc_normal(Shape{st.dim, h}, 0.02f, rng);
      b.mlp_b2 = Tensor(Shape{st.dim});
      b.layer_scale_1 = Tensor(Shape{st.dim}, spec.layer_scale_init);
      b.layer_scale_2 = Tensor(Shape{st.dim}, spec.layer_scale_init);
      m.blocks.push_back(std::move(b));
    }
    in_c = st.dim;
  }
  m.norm_gamma = Tensor(Shape{in_c}, 1.0f);
  m.norm_beta = Tensor(Shape{in_c});
  m.head_w = trunc_normal(Shape{spec.num_classes, in_c}, 0.02f, rng);
  m.head_b = Tensor(Shape{spec.num_classes});
  return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < embed_w.size(); ++i) {
    out.emplace_back("embed." + std::to_string(i) + ".weight", embed_w[i]);
    out.emplace_back("embed." + std::to_string(i) + ".bias", embed_b[i]);
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    const std::string n1 = deployed ? "norm_reparam." : "norm1.";
    out.emplace_back(p + n1 + "gamma", b.norm1_gamma);
    out.emplace_back(p + n1 + "beta", b.norm1_beta);
    if (b.s.defined()) {
      out.emplace_back(p + "mixer.s", b.s);
      out.emplace_back(p + "mixer.t", b.t);
    }
    out.emplace_back(p + "norm2.gamma", b.norm2_gamma);
    out.emplace_back(p + "norm2.beta", b.norm2_beta);
    out.emplace_back(p + "mlp.fc1.weight", b.mlp_w1);
    out.emplace_back(p + "mlp.fc1.bias", b.mlp_b1);
    out.emplace_back(p + "mlp.fc2.weight", b.mlp_w2);
    out.emplace_back(p + "mlp.fc2.bias", b.mlp_b2);
    out.emplace_back(p + "layer_scale_1", b.layer_scale_1);
    out.emplace_back(p + "layer_scale_2", b.layer_scale_2);
  }
  out.emplace_back("norm.gamma", norm_gamma);
  out.emplace_back("norm.beta", norm_beta);
  out.emplace_back("head.weight", head_w);
  out.emplace_back("head.bias", head_b);
  return out;
}

std::vector<ParamRef> Model::parameters() const {
  std::vector<ParamRef> out;
  for (auto& [name, t] : named_tensors()) {
    const bool decay = t.shape().rank() >= 2;
    out.push_back(ParamRef{name, t, decay});
  }
  return out;
}

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t.numel();
  return n;
}

void Model::set_requires_grad(bool on) const {
  for (auto [name, t] : named_tensors()) t.set_requires_grad(on);
}

void Model::zero_grad() const {
  for (auto [name, t] : named_tensors()) t.zero_grad();
}

Model Model::clone() const {
  auto copy = [](const Tensor& t) { return t.defined() ? t.clone() : Tensor(); };
  Model m;
  m.spec = spec;
  m.deployed = deployed;
  for (const auto& t : embed_w) m.embed_w.push_back(copy(t));
  for (const auto& t : embed_b) m.embed_b.push_back(copy(t));
  for (const auto& b : blocks) {
    BlockWeights c = b;
    for (Tensor* t : {&c.norm1_gamma, &c.norm1_beta, &c.s, &c.t, &c.norm2_gamma, &c.norm2_beta, &c.mlp_w1,
                      &c.mlp_b1, &c.mlp_w2, &c.mlp_b2, &c.layer_scale_1, &c.layer_scale_2}) {
      *t = copy(*t);
    }
    m.blocks.push_back(std::move(c));
  }
  m.norm_gamma = copy(norm_gamma);
  m.norm_beta = copy(norm_beta);
  m.head_w = copy(head_w);
  m.head_b = copy(head_b);
  return m;
}

namespace {

// Per-sample keep mask scaled by 1/(1-p), shaped like x.
Tensor drop_path_mask(const Tensor& x, float p, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(x.shape());
  const std::int64_t per = x.numel() / x.dim(0);
  for (std::int64_t n = 0; n < x.dim(0); ++n) {
    const float v = keep(rng) ? 1.0f / (1.0f - p) : 0.0f;
    std::fill_n(mask.ptr() + n * per, per, v);
  }
  return mask;
}

Tensor residual(Tape* tape, const Tensor& x, const Tensor& branch, const Tensor& ls, float drop, const ForwardOptions& o) {
  Tensor scaled = ops::channel_scale(tape, branch, ls);
  if (drop > 0.0f && o.training) {
    if (o.rng == nullptr) throw ShapeError("forward: drop path needs an rng");
    scaled = ops::mul(tape, scaled, drop_path_mask(scaled, drop, *o.rng));
  }
  return ops::add(tape, x, scaled);
}

Tensor block_forward(const Model& model, int index, const Tensor& x, const ForwardOptions& o, float drop,
                     BlockCapture* cap) {
  const BlockWeights& w = model.blocks[index];
  Tape* tape = o.tape;
  if (x.dim(1) != w.dim) throw ShapeError("block " + std::to_string(index) + ": channel mismatch");
  if (cap) cap->input = x;
  if (o.components == Components::embed) {
    if (cap) cap->output = x;
    return x;
  }
  const Tensor n1 = ops::group_norm1(tape, x, w.norm1_gamma, w.norm1_beta);
  Tensor branch;
  if (o.components == Components::norm) {
    // norm1 is computed but not added
  } else if (model.deployed) {
    branch = n1;
  } else {
    switch (model.spec.mixer) {
      case MixerKind::pooling: branch = ops::pooling_mixer(tape, n1, model.spec.pool_size); break;
      case MixerKind::affine: branch = ops::affine_mixer(tape, n1, w.s, w.t); break;
      case MixerKind::identity: break;
    }
  }
  Tensor x1 = branch.defined() ? residual(tape, x, branch, w.layer_scale_1, drop, o) : x;
  if (cap) {
    cap->norm_out = n1;
    cap->mixer_out = branch.defined() ? branch : Tensor(x.shape());
  }
  const Tensor n2 = ops::group_norm1(tape, x1, w.norm2_gamma, w.norm2_beta);
  Tensor h;
  if (o.components == Components::full) {
    h = ops::pointwise_linear(tape, n2, w.mlp_w1, w.mlp_b1);
    h = ops::gelu(tape, h);
    h = ops::pointwise_linear(tape, h, w.mlp_w2, w.mlp_b2);
  } else {
    h = n2;
  }
  Tensor out = residual(tape, x1, h, w.layer_scale_2, drop, o);
  if (cap) cap->output = out;
  return out;
}

Tensor run_features(const Model& model, const Tensor& x, const ForwardOptions& o, ForwardResult* result) {
  const ModelSpec& spec = model.spec;
  require_rank(x, 4, "forward");
  if (x.dim(1) != spec.in_channels || x.dim(2) != spec.input_resolution || x.dim(3) != spec.input_resolution) {
    throw ShapeError("forward: input " + x.shape().str() + " does not match model resolution " +
                     std::to_string(spec.input_resolution) + " with " + std::to_string(spec.in_channels) +
                     " channels");
  }
  if (model.deployed && spec.mixer != MixerKind::affine) throw ShapeError("forward: deployed non-affine model");
  for (int idx : o.capture) {
    if (idx < 0 || idx >= spec.total_blocks()) throw ShapeError("forward: capture index out of range");
  }
  const int total = spec.total_blocks();
  Tensor h = x;
  int block = 0;
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const auto& st = spec.stages[s];
    h = ops::conv2d(o.tape, h, model.embed_w[s], model.embed_b[s], st.stride, st.padding);
    for (int d = 0; d < st.depth; ++d, ++block) {
      const float drop = total > 1 ? spec.drop_path_rate * static_cast<float>(block) / static_cast<float>(total - 1)
                                   : spec.drop_path_rate;
      BlockCapture* cap = nullptr;
      if (result && o.capture.count(block)) cap = &result->blocks[block];
      h = block_forward(model, block, h, o, drop, cap);
    }
    if (result && o.capture_stages) result->stages.push_back(h);
  }
  return h;
}

}  // namespace

ForwardResult forward(const Model& model, const Tensor& x, const ForwardOptions& options) {
  ForwardResult r;
  r.features = run_features(model, x, options, &r);
  Tensor n = ops::group_norm1(options.tape, r.features, model.norm_gamma, model.norm_beta);
  r.logits = ops::pointwise_linear(options.tape, ops::spatial_mean(options.tape, n), model.head_w, model.head_b);
  return r;
}

Tensor forward_features(const Model& model, const Tensor& x, const ForwardOptions& options) {
  return run_features(model, x, options, nullptr);
}

Tensor logits(const Model& model, const Tensor& x) { return forward(model, x).logits; }

}  // namespace riformer
