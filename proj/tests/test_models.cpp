// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "riformer/bench.hpp"
#include "riformer/imitation.hpp"
#include "riformer/model.hpp"
#include "riformer/ops.hpp"
#include "riformer/reparam.hpp"

using namespace riformer;

namespace {

Tensor randn(Shape s, std::uint64_t seed, float scale = 1.0f) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, scale);
  Tensor t(s);
  for (float& v : t.data()) v = g(rng);
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Moves s, t and the layer scales away from their init so the mixer matters.
void perturb(Model& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 0.5f);
  for (auto& b : m.blocks) {
    for (Tensor* t : {&b.s, &b.t, &b.norm1_gamma, &b.norm1_beta}) {
      if (t->defined()) {
        for (float& v : t->data()) v += g(rng);
      }
    }
    for (float& v : b.layer_scale_1.data()) v = 0.5f + 0.2f * g(rng);
    for (float& v : b.layer_scale_2.data()) v = 0.5f + 0.2f * g(rng);
  }
}

}  // namespace

TEST_CASE("nano spec layout") {
  const ModelSpec s = ModelSpec::nano(MixerKind::affine);
  REQUIRE(s.stages.size() == 4);
  CHECK(s.stages[0].patch == 7);
  CHECK(s.stages[0].stride == 4);
  CHECK(s.stages[0].padding == 2);
  CHECK(s.stages[1].patch == 3);
  CHECK(s.stages[1].stride == 2);
  CHECK(s.total_blocks() == 6);
  CHECK(s.stage_resolutions() == std::vector<int>{16, 8, 4, 2});
  CHECK(s.stage_of_block(0) == 0);
  CHECK(s.stage_of_block(3) == 2);
  CHECK(s.stage_of_block(5) == 3);
  CHECK(s.layer_scale_init == doctest::Approx(1e-5));
  CHECK(s.isomorphic(ModelSpec::nano(MixerKind::pooling)));
  ModelSpec other = s;
  other.stages[2].dim = 48;
  CHECK_FALSE(s.isomorphic(other));
}

TEST_CASE("spec validation names the bad field") {
  ModelSpec s = ModelSpec::nano(MixerKind::pooling);
  s.pool_size = 2;
  CHECK_THROWS_AS(s.validate(), ShapeError);
  s = ModelSpec::nano(MixerKind::pooling);
  s.input_resolution = 60;
  CHECK_THROWS_AS(s.validate(), ShapeError);
  s = ModelSpec::nano(MixerKind::pooling);
  s.stages.clear();
  CHECK_THROWS_AS(s.validate(), ShapeError);
  CHECK_THROWS_AS(parse_mixer("attention"), ShapeError);
}

TEST_CASE("build_model is seeded and names are unique") {
  const Model a = build_model(ModelSpec::nano(MixerKind::affine), 4);
  const Model b = build_model(ModelSpec::nano(MixerKind::affine), 4);
  const Model c = build_model(ModelSpec::nano(MixerKind::affine), 5);
  std::set<std::string> names;
  bool differs = false;
  const auto ta = a.named_tensors(), tb = b.named_tensors(), tc = c.named_tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    names.insert(ta[i].first);
    CHECK(bit_equal(ta[i].second, tb[i].second));
    differs |= !bit_equal(ta[i].second, tc[i].second);
  }
  CHECK(names.size() == ta.size());
  CHECK(differs);
  for (const auto& blk : a.blocks) {
    for (float v : blk.s.data()) CHECK(v == 1.0f);
    for (float v : blk.t.data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("parameter count matches a closed form for nano") {
  const ModelSpec s = ModelSpec::nano(MixerKind::pooling);
  std::int64_t expect = 0;
  int in = s.in_channels;
  for (const auto& st : s.stages) {
    expect += static_cast<std::int64_t>(st.dim) * in * st.patch * st.patch + st.dim;
    const int hidden = static_cast<int>(st.dim * st.mlp_ratio);
    const std::int64_t block = 4 * st.dim + 2 * static_cast<std::int64_t>(st.dim) * hidden + hidden + st.dim + 2 * st.dim;
    expect += block * st.depth;
    in = st.dim;
  }
  expect += 2 * in + static_cast<std::int64_t>(s.num_classes) * in + s.num_classes;
  CHECK(build_model(s, 0).parameter_count() == expect);
  const std::int64_t mixers = 2 * (16 + 32 + 3 * 64 + 128);
  CHECK(build_model(ModelSpec::nano(MixerKind::affine), 0).parameter_count() == expect + mixers);
}

TEST_CASE("affine model at init is identical to the identity model") {
  const Model aff = build_model(ModelSpec::nano(MixerKind::affine), 11);
  Model idn = build_model(ModelSpec::nano(MixerKind::identity), 11);
  const Tensor x = randn(Shape{3, 3, 64, 64}, 1);
  CHECK(bit_equal(logits(aff, x), logits(idn, x)));
}

TEST_CASE("pooling model on a constant image matches the identity model exactly") {
  const Model pool = build_model(ModelSpec::nano(MixerKind::pooling), 12);
  const Model idn = build_model(ModelSpec::nano(MixerKind::identity), 12);
  const Tensor x(Shape{2, 3, 64, 64}, 0.37f);
  ForwardOptions o;
  o.capture = {0, 1, 2, 3, 4, 5};
  const ForwardResult r = forward(pool, x, o);
  for (const auto& [i, cap] : r.blocks) {
    for (float v : cap.mixer_out.data()) CHECK(v == 0.0f);
  }
  CHECK(bit_equal(r.logits, logits(idn, x)));
}

TEST_CASE("forward shapes, captures and component levels") {
  const Model m = build_model(ModelSpec::nano(MixerKind::pooling), 2);
  const Tensor x = randn(Shape{2, 3, 64, 64}, 2);
  ForwardOptions o;
  o.capture = {1, 4};
  o.capture_stages = true;
  const ForwardResult r = forward(m, x, o);
  CHECK(r.logits.shape() == Shape{2, 10});
  CHECK(r.features.shape() == Shape{2, 128, 2, 2});
  REQUIRE(r.stages.size() == 4);
  CHECK(r.stages[0].shape() == Shape{2, 16, 16, 16});
  CHECK(r.blocks.size() == 2);
  CHECK(r.blocks.at(4).output.shape() == Shape{2, 64, 4, 4});
  for (auto level : {Components::embed, Components::norm, Components::mixer, Components::full}) {
    ForwardOptions lo;
    lo.components = level;
    CHECK(forward_features(m, x, lo).shape() == Shape{2, 128, 2, 2});
  }
}

TEST_CASE("drop path needs an rng in training mode and is inert in eval") {
  ModelSpec s = ModelSpec::nano(MixerKind::pooling);
  s.drop_path_rate = 0.3f;
  const Model m = build_model(s, 1);
  const Tensor x = randn(Shape{2, 3, 64, 64}, 3);
  ForwardOptions o;
  o.training = true;
  CHECK_THROWS(forward(m, x, o));
  std::mt19937_64 rng(1);
  o.rng = &rng;
  CHECK(forward(m, x, o).logits.shape() == Shape{2, 10});
  CHECK(bit_equal(logits(m, x), logits(m, x)));
}

TEST_CASE("fuse_affine reproduces the tabulated values exactly") {
  const FusedNorm f = fuse_affine(Tensor::from(Shape{1}, {2.0f}), Tensor::from(Shape{1}, {0.5f}),
                                  Tensor::from(Shape{1}, {3.0f}), Tensor::from(Shape{1}, {0.1f}));
  CHECK(f.gamma_prime.data()[0] == 4.0f);
  CHECK(f.beta_prime.data()[0] == 1.1f);
  const FusedNorm id = fuse_affine(Tensor::from(Shape{2}, {1.5f, -2.0f}), Tensor::from(Shape{2}, {0.25f, 3.0f}),
                                   Tensor::from(Shape{2}, {1.0f, 1.0f}), Tensor::from(Shape{2}, {0.0f, 0.0f}));
  CHECK(id.gamma_prime.data()[0] == 0.0f);
  CHECK(id.beta_prime.data()[1] == 0.0f);
}

TEST_CASE("switch_to_deploy preserves the function and removes s, t") {
  Model m = build_model(ModelSpec::nano(MixerKind::affine), 21);
  perturb(m, 22);
  const Model d = switch_to_deploy(m);
  CHECK(d.deployed);
  for (const auto& b : d.blocks) {
    CHECK_FALSE(b.s.defined());
    CHECK_FALSE(b.t.defined());
  }
  CHECK(d.parameter_count() == m.parameter_count() - 2 * (16 + 32 + 3 * 64 + 128));
  const EquivalenceReport r = verify_equivalence(m, d, 16, 1e-5, 3);
  CHECK(r.pass);
  CHECK(r.max_abs_diff <= 1e-5);
  CHECK(r.to_json().find("\"pass\": true") != std::string::npos);
  CHECK_THROWS_AS(switch_to_deploy(d), ShapeError);
  CHECK_THROWS_AS(switch_to_deploy(build_model(ModelSpec::nano(MixerKind::pooling), 0)), ShapeError);
}

TEST_CASE("verify_equivalence flags a corrupted deploy model") {
  Model m = build_model(ModelSpec::nano(MixerKind::affine), 23);
  perturb(m, 24);
  Model d = switch_to_deploy(m);
  d.blocks[2].norm1_beta.data()[0] += 0.5f;
  const EquivalenceReport r = verify_equivalence(m, d, 8, 1e-5, 0);
  CHECK_FALSE(r.pass);
  CHECK(r.max_abs_diff > 1e-3);
}

TEST_CASE("deploy form executes strictly fewer operations") {
  Model m = build_model(ModelSpec::nano(MixerKind::affine), 25);
  const Model d = switch_to_deploy(m);
  const auto train_ops = count_ops(m, 2);
  const auto deploy_ops = count_ops(d, 2);
  CHECK(deploy_ops.total() < train_ops.total());
  CHECK(deploy_ops.by_op.count("affine_mixer") == 0);
  CHECK(train_ops.by_op.at("affine_mixer") > 0);
}

TEST_CASE("imitation losses vanish on identical inputs") {
  const Tensor a = randn(Shape{2, 4, 3, 3}, 30);
  const Tensor l = randn(Shape{2, 10}, 31);
  CHECK(loss_in(nullptr, a, a).item() == 0.0f);
  CHECK(loss_in_prime(nullptr, a, a).item() == 0.0f);
  CHECK(loss_out(nullptr, a, a).item() == 0.0f);
  CHECK(loss_rel(nullptr, a, a).item() == 0.0f);
  CHECK(loss_soft(nullptr, l, l, 1.0f).item() == 0.0f);
}

TEST_CASE("loss_in: constant difference and naive oracle") {
  const Tensor a = randn(Shape{2, 3, 4, 4}, 32);
  Tensor b = a.clone();
  for (float& v : b.data()) v -= 0.75f;
  CHECK(loss_in(nullptr, a, b).item() == doctest::Approx(0.5625).epsilon(1e-6));
  const Tensor c = randn(Shape{2, 3, 4, 4}, 33);
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) acc += std::pow(static_cast<double>(a.data()[i]) - c.data()[i], 2);
  acc /= static_cast<double>(a.numel());
  CHECK(std::fabs(loss_in_prime(nullptr, a, c).item() - acc) <= 1e-7 * std::max(1.0, acc));
  CHECK(std::fabs(loss_out(nullptr, a, c).item() - acc) <= 1e-7 * std::max(1.0, acc));
}

TEST_CASE("loss_rel: identity versus all-ones relation gives 0.5") {
  const Tensor student = Tensor::from(Shape{1, 2, 1, 2}, {1, 0, 0, 1});
  const Tensor teacher = Tensor::from(Shape{1, 2, 1, 2}, {1, 1, 1, 1});
  CHECK(loss_rel(nullptr, student, teacher).item() == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("loss_rel is invariant to positive scaling of the student") {
  const Tensor x = randn(Shape{2, 5, 3, 3}, 34);
  const Tensor y = randn(Shape{2, 5, 3, 3}, 35);
  const float base = loss_rel(nullptr, x, y).item();
  for (float c : {0.01f, 0.5f, 3.0f, 250.0f}) {
    CHECK(std::fabs(loss_rel(nullptr, ops::scale(nullptr, x, c), y).item() - base) <= 1e-6);
  }
}

TEST_CASE("loss_soft: scalar oracle and flattening limit") {
  const Tensor t = Tensor::from(Shape{1, 2}, {1.0f, 0.0f});
  const Tensor s = Tensor::from(Shape{1, 2}, {0.0f, 1.0f});
  const double p0 = 1.0 / (1.0 + std::exp(-1.0)), p1 = 1.0 - p0;
  const double oracle = p0 * std::log(p0 / p1) + p1 * std::log(p1 / p0);
  CHECK(std::fabs(loss_soft(nullptr, s, t, 1.0f).item() - oracle) <= 1e-7);
  const Tensor a = randn(Shape{3, 5}, 36), b = randn(Shape{3, 5}, 37);
  // The divergence itself flattens; the tau^2 factor keeps the product bounded.
  const double kl_big = loss_soft(nullptr, a, b, 1000.0f).item() / 1e6;
  CHECK(kl_big < 1e-3 * loss_soft(nullptr, a, b, 1.0f).item());
}

TEST_CASE("phase schedule follows feat then rel then soft only") {
  ImitationConfig c;
  c.feat_epochs = 80;
  c.rel_epochs = 20;
  c.total_epochs = 120;
  CHECK(phase_for_epoch(0, c) == Phase::feat);
  CHECK(phase_for_epoch(79, c) == Phase::feat);
  CHECK(phase_for_epoch(90, c) == Phase::rel);
  CHECK(phase_for_epoch(110, c) == Phase::soft_only);
  CHECK_THROWS(phase_for_epoch(120, c));
}

TEST_CASE("select_layers") {
  const ModelSpec nano = ModelSpec::nano(MixerKind::affine);
  CHECK(select_layers(nano, 4) == std::vector<int>{0, 1, 4, 5});
  CHECK(select_layers(nano, 6) == std::vector<int>{0, 1, 2, 3, 4, 5});
  CHECK(select_layers(nano, 1) == std::vector<int>{5});
  CHECK(select_layers(nano, 2) == std::vector<int>{2, 5});
  CHECK_THROWS(select_layers(nano, 7));
  CHECK_THROWS(select_layers(nano, 0));
}

TEST_CASE("total_loss: gating, zero lambdas, mixer gradient, frozen teacher") {
  Model teacher = build_model(ModelSpec::nano(MixerKind::pooling), 40);
  Model student = build_model(ModelSpec::nano(MixerKind::affine), 41);
  const Tensor x = randn(Shape{2, 3, 64, 64}, 42);
  ImitationConfig cfg;
  cfg.layers = {0, 1, 4, 5};
  cfg.lambda1_b = 2.0f;
  cfg.lambda2_b = 2.0f;
  cfg.lambda3_b = 2.0f;
  ForwardOptions to;
  to.capture = {0, 1, 4, 5};
  const ForwardResult tr = forward(teacher, x, to);

  student.set_requires_grad(true);
  Tape tape;
  ForwardOptions so = to;
  so.tape = &tape;
  const ForwardResult sr = forward(student, x, so);
  const ImitationLoss feat = total_loss(&tape, sr, tr, 0, cfg, 2);
  CHECK(feat.report.active == std::set<std::string>{"soft", "in_prime", "out"});
  CHECK(feat.report.out > 0.0);
  tape.backward(feat.total);
  double sgrad = 0.0, tgrad = 0.0;
  for (const auto& b : student.blocks) {
    for (float g : b.s.grad()) sgrad += std::fabs(g);
    for (float g : b.t.grad()) tgrad += std::fabs(g);
  }
  CHECK(sgrad > 0.0);
  CHECK(tgrad > 0.0);
  for (const auto& [name, t] : teacher.named_tensors()) CHECK_FALSE(t.has_grad());

  const ImitationLoss rel = total_loss(nullptr, sr, tr, 45, cfg, 2);
  CHECK(rel.report.active == std::set<std::string>{"soft", "rel"});
  const ImitationLoss late = total_loss(nullptr, sr, tr, 55, cfg, 2);
  CHECK(late.report.active == std::set<std::string>{"soft"});
  CHECK(late.total.item() == late.soft.item());

  cfg.lambda1_b = cfg.lambda2_b = cfg.lambda3_b = 0.0f;
  for (int e : {0, 45, 55}) {
    const ImitationLoss z = total_loss(nullptr, sr, tr, e, cfg, 2);
    CHECK(z.total.item() == z.soft.item());
  }
}

TEST_CASE("load_from_teacher copies all but the mixer and matches on constant probes") {
  const Model teacher = build_model(ModelSpec::nano(MixerKind::pooling), 50);
  Model student = build_model(ModelSpec::nano(MixerKind::affine), 51);
  load_from_teacher(student, teacher);
  std::map<std::string, Tensor> tt;
  for (const auto& [n, t] : teacher.named_tensors()) tt[n] = t;
  for (const auto& [n, t] : student.named_tensors()) {
    if (n.find(".mixer.") != std::string::npos) continue;
    CHECK(bit_equal(t, tt.at(n)));
    CHECK_FALSE(t.same_storage(tt.at(n)));
  }
  for (float v : {-1.0f, 0.0f, 0.6f}) {
    const Tensor c(Shape{2, 3, 64, 64}, v);
    CHECK(bit_equal(logits(student, c), logits(teacher, c)));
  }
  Model wrong = build_model(ModelSpec::nano(MixerKind::identity), 0);
  CHECK_THROWS(load_from_teacher(wrong, teacher));
  Model aff = build_model(ModelSpec::nano(MixerKind::affine), 0);
  CHECK_THROWS(load_from_teacher(aff, aff));
}
