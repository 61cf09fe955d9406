// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/reparam.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

namespace riformer {

FusedNorm fuse_affine(const Tensor& gamma, const Tensor& beta, const Tensor& s, const Tensor& t) {
  require_rank(gamma, 1, "fuse_affine");
  for (const Tensor* v : {&beta, &s, &t}) require_same_shape(gamma, *v, "fuse_affine");
  FusedNorm f{Tensor(gamma.shape()), Tensor(gamma.shape())};
  const auto g = gamma.data();
  const auto b = beta.data();
  const auto sv = s.data();
  const auto tv = t.data();
  auto gp = f.gamma_prime.data();
  auto bp = f.beta_prime.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const float sm1 = sv[i] - 1.0f;
    gp[i] = g[i] * sm1;
    bp[i] = b[i] * sm1 + tv[i];
  }
  return f;
}

Model switch_to_deploy(const Model& model) {
  if (model.spec.mixer != MixerKind::affine) {
    throw ShapeError(std::string("switch_to_deploy: needs an affine model, got ") + mixer_name(model.spec.mixer));
  }
  if (model.deployed) throw ShapeError("switch_to_deploy: model is already deployed");
  Model out = model.clone();
  for (auto& b : out.blocks) {
    FusedNorm f = fuse_affine(b.norm1_gamma, b.norm1_beta, b.s, b.t);
    b.norm1_gamma = f.gamma_prime;
    b.norm1_beta = f.beta_prime;
    b.s = Tensor();
    b.t = Tensor();
  }
  out.deployed = true;
  return out;
}

std::string EquivalenceReport::to_json() const {
  nlohmann::ordered_json j;
  j["samples"] = samples;
  j["max_abs_diff"] = max_abs_diff;
  j["mean_abs_diff"] = mean_abs_diff;
  j["tolerance"] = tolerance;
  j["pass"] = pass;
  return j.dump(2);
}

EquivalenceReport verify_equivalence(const Model& train_form, const Model& deploy_form, int n_probes, double tol,
                                     std::uint64_t seed) {
  if (!(train_form.spec == deploy_form.spec)) throw ShapeError("verify_equivalence: model specs differ");
  if (n_probes < 1) throw ShapeError("verify_equivalence: need at least one probe");
  if (!(tol >= 0.0)) throw ShapeError("verify_equivalence: tolerance must be >= 0");
  const ModelSpec& spec = train_form.spec;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist;
  ForwardOptions opts;
  for (int i = 0; i < spec.total_blocks(); ++i) opts.capture.insert(i);

  EquivalenceReport r;
  r.tolerance = tol;
  double total = 0.0;
  std::uint64_t compared = 0;
  auto accumulate = [&](const Tensor& a, const Tensor& b) {
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double d = std::fabs(static_cast<double>(av[i]) - bv[i]);
      r.max_abs_diff = std::isnan(d) ? INFINITY : std::max(r.max_abs_diff, d);
      total += d;
    }
    compared += av.size();
  };
  constexpr int kChunk = 8;
  for (int done = 0; done < n_probes; done += kChunk) {
    const int n = std::min(kChunk, n_probes - done);
    Tensor x(Shape{n, spec.in_channels, spec.input_resolution, spec.input_resolution});
    for (auto& v : x.data()) v = dist(rng);
    const ForwardResult a = forward(train_form, x, opts);
    const ForwardResult b = forward(deploy_form, x, opts);
    accumulate(a.logits, b.logits);
    for (const auto& [idx, cap] : a.blocks) accumulate(cap.output, b.blocks.at(idx).output);
  }
  r.samples = n_probes;
  r.mean_abs_diff = compared ? total / static_cast<double>(compared) : 0.0;
  r.pass = r.max_abs_diff <= tol;
  return r;
}

}  // namespace riformer
