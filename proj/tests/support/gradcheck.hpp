// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "riformer/imitation.hpp"
#include "riformer/ops.hpp"

namespace riformer::testing {

using GradFn = std::function<Tensor(Tape*, const std::vector<Tensor>&)>;

struct GradCase {
  std::string name;
  std::vector<Shape> inputs;
  GradFn fn;
  float lo = -1.0f;
  float hi = 1.0f;
};

struct GradResult {
  std::string name;
  std::uint64_t seed = 0;
  double rel_err = 0.0;
};

// Scalar probe L = sum(w * f(x)) with fixed random w.
inline double probe(const GradCase& c, const std::vector<Tensor>& xs, const std::vector<float>& w) {
  const Tensor y = c.fn(nullptr, xs);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += static_cast<double>(w[i]) * y.data()[i];
  return acc;
}

// Norm-wise relative error of the analytic gradient against a Richardson-extrapolated central difference.
inline GradResult check_gradient(const GradCase& c, std::uint64_t seed, double h = 1e-2) {
  std::mt19937_64 rng(seed * 7919 + 17);
  std::uniform_real_distribution<float> u(c.lo, c.hi);
  std::vector<Tensor> xs;
  for (const auto& s : c.inputs) {
    Tensor t(s);
    for (float& v : t.data()) v = u(rng);
    t.set_requires_grad(true);
    xs.push_back(t);
  }
  const Tensor y0 = c.fn(nullptr, xs);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> w(static_cast<std::size_t>(y0.numel()));
  for (float& v : w) v = g(rng);

  Tape tape;
  const Tensor y = c.fn(&tape, xs);
  const Tensor loss = ops::sum(&tape, ops::mul(&tape, y, Tensor::from(y.shape(), w)));
  tape.backward(loss);

  double num = 0.0, den = 0.0;
  for (auto& x : xs) {
    std::vector<float> analytic(x.grad().begin(), x.grad().end());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      const float old = x.data()[i];
      auto at = [&](double step) {
        x.data()[i] = static_cast<float>(old + step);
        const double actual = static_cast<double>(x.data()[i]) - old;
        const double v = probe(c, xs, w);
        x.data()[i] = old;
        return std::pair{v, actual};
      };
      auto central = [&](double step) {
        const auto [p, dp] = at(step);
        const auto [m, dm] = at(-step);
        return (p - m) / (dp - dm);
      };
      const double d1 = central(h);
      const double d2 = central(h / 2);
      const double fd = (4.0 * d2 - d1) / 3.0;
      const double a = analytic[static_cast<std::size_t>(i)];
      num += (a - fd) * (a - fd);
      den += fd * fd;
    }
  }
  return {c.name, seed, std::sqrt(num) / std::max(std::sqrt(den), 1e-6)};
}

inline std::vector<GradCase> gradient_cases() {
  using ops::Padding;
  std::vector<GradCase> cs;
  auto add = [&](std::string n, std::vector<Shape> in, GradFn f, float lo = -1.0f, float hi = 1.0f) {
    cs.push_back({std::move(n), std::move(in), std::move(f), lo, hi});
  };
  const Shape img{2, 3, 5, 4};
  add("add", {img, img}, [](Tape* t, const auto& x) { return ops::add(t, x[0], x[1]); });
  add("sub", {img, img}, [](Tape* t, const auto& x) { return ops::sub(t, x[0], x[1]); });
  add("mul", {img, img}, [](Tape* t, const auto& x) { return ops::mul(t, x[0], x[1]); });
  add("scale", {img}, [](Tape* t, const auto& x) { return ops::scale(t, x[0], -1.7f); });
  add("channel_scale", {img, Shape{3}}, [](Tape* t, const auto& x) { return ops::channel_scale(t, x[0], x[1]); });
  add("affine_mixer", {img, Shape{3}, Shape{3}},
      [](Tape* t, const auto& x) { return ops::affine_mixer(t, x[0], x[1], x[2]); });
  add("group_norm1", {img, Shape{3}, Shape{3}},
      [](Tape* t, const auto& x) { return ops::group_norm1(t, x[0], x[1], x[2]); });
  add("avg_pool_same", {Shape{2, 2, 5, 6}}, [](Tape* t, const auto& x) { return ops::avg_pool_same(t, x[0], 3); });
  add("pooling_mixer", {Shape{2, 2, 5, 6}}, [](Tape* t, const auto& x) { return ops::pooling_mixer(t, x[0], 3); });
  add("pointwise_linear_4d", {img, Shape{4, 3}, Shape{4}},
      [](Tape* t, const auto& x) { return ops::pointwise_linear(t, x[0], x[1], x[2]); });
  add("pointwise_linear_2d", {Shape{3, 5}, Shape{4, 5}, Shape{4}},
      [](Tape* t, const auto& x) { return ops::pointwise_linear(t, x[0], x[1], x[2]); });
  add("conv2d_zeros", {Shape{2, 2, 6, 5}, Shape{3, 2, 3, 3}, Shape{3}},
      [](Tape* t, const auto& x) { return ops::conv2d(t, x[0], x[1], x[2], 2, 1, Padding::zeros); });
  add("conv2d_replicate", {Shape{2, 2, 7, 7}, Shape{3, 2, 3, 3}, Shape{3}},
      [](Tape* t, const auto& x) { return ops::conv2d(t, x[0], x[1], x[2], 2, 1, Padding::replicate); });
  add("conv2d_stem", {Shape{1, 3, 8, 8}, Shape{2, 3, 7, 7}, Shape{2}},
      [](Tape* t, const auto& x) { return ops::conv2d(t, x[0], x[1], x[2], 4, 2, Padding::replicate); });
  add("gelu", {img}, [](Tape* t, const auto& x) { return ops::gelu(t, x[0]); }, -3.0f, 3.0f);
  add("spatial_mean", {img}, [](Tape* t, const auto& x) { return ops::spatial_mean(t, x[0]); });
  add("spatial_point_sum", {img}, [](Tape* t, const auto& x) { return ops::spatial_point_sum(t, x[0], 2, 1); });
  add("softmax", {Shape{3, 5}}, [](Tape* t, const auto& x) { return ops::softmax(t, x[0]); }, -2.0f, 2.0f);
  add("log_softmax", {Shape{3, 5}}, [](Tape* t, const auto& x) { return ops::log_softmax(t, x[0]); }, -2.0f, 2.0f);
  add("mse", {img, img}, [](Tape* t, const auto& x) { return ops::mse(t, x[0], x[1]); });
  add("kl_div", {Shape{3, 5}, Shape{3, 5}},
      [](Tape* t, const auto& x) { return ops::kl_div(t, ops::log_softmax(t, x[0]), ops::softmax(t, x[1])); },
      -2.0f, 2.0f);
  add("kl_div_log", {Shape{3, 5}, Shape{3, 5}},
      [](Tape* t, const auto& x) { return ops::kl_div_log(t, ops::log_softmax(t, x[0]), ops::log_softmax(t, x[1])); },
      -2.0f, 2.0f);
  add("cross_entropy", {Shape{4, 5}}, [](Tape* t, const auto& x) {
    const std::vector<int> labels{0, 3, 4, 1};
    return ops::cross_entropy(t, x[0], labels, 0.1f);
  }, -2.0f, 2.0f);
  add("relation_matrix", {Shape{2, 3, 2, 2}}, [](Tape* t, const auto& x) { return ops::relation_matrix(t, x[0]); });
  add("sum", {img}, [](Tape* t, const auto& x) { return ops::sum(t, x[0]); });
  add("mean", {img}, [](Tape* t, const auto& x) { return ops::mean(t, x[0]); });
  add("loss_rel", {Shape{2, 3, 2, 2}, Shape{2, 3, 2, 2}},
      [](Tape* t, const auto& x) { return loss_rel(t, x[0], x[1]); });
  add("loss_soft", {Shape{3, 5}, Shape{3, 5}},
      [](Tape* t, const auto& x) { return loss_soft(t, x[0], x[1], 2.0f); }, -2.0f, 2.0f);
  return cs;
}

}  // namespace riformer::testing
