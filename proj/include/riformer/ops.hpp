// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "riformer/tape.hpp"
#include "riformer/tensor.hpp"

// Differentiable kernels. Every op takes the tape first; pass nullptr (or
// inputs without requires_grad) for pure inference. Outputs are fresh tensors.
namespace riformer::ops {

enum class Padding { zeros, replicate };

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& x, float factor);

// x[:, c, ...] * v[c]
Tensor channel_scale(Tape* tape, const Tensor& x, const Tensor& v);

// s[c] * m + t[c] - m, per channel.
Tensor affine_mixer(Tape* tape, const Tensor& m, const Tensor& s, const Tensor& t);

// Per-sample statistics over C*H*W (one group), per-channel gamma/beta.
Tensor group_norm1(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   float eps = 1e-5f);

// Stride-1 mean pooling with (k-1)/2 padding; border windows average only
// the in-image elements. k must be odd.
Tensor avg_pool_same(Tape* tape, const Tensor& x, int k);
// avg_pool_same(m, k) - m
Tensor pooling_mixer(Tape* tape, const Tensor& m, int k);

// 1x1 convolution on (N,C,H,W) or a dense layer on (N,C). w is (O,C), b is (O).
Tensor pointwise_linear(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b);

// k x k convolution, w is (O,C,k,k).
Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding,
              Padding mode = Padding::replicate);

Tensor gelu(Tape* tape, const Tensor& x);

// (N,C,H,W) -> (N,C)
Tensor spatial_mean(Tape* tape, const Tensor& x);

// Sum over batch and channels of x[:, :, h, w]; a scalar.
Tensor spatial_point_sum(Tape* tape, const Tensor& x, std::int64_t h, std::int64_t w);

// Over the last dimension of an (N,K) tensor.
Tensor softmax(Tape* tape, const Tensor& x);
Tensor log_softmax(Tape* tape, const Tensor& x);

// Mean of squared differences over every element.
Tensor mse(Tape* tape, const Tensor& a, const Tensor& b);

// Batch mean of sum_k p (log p - log_q); rows of (N,K).
Tensor kl_div(Tape* tape, const Tensor& log_q, const Tensor& p);
// Same divergence with the target given as log-probabilities.
Tensor kl_div_log(Tape* tape, const Tensor& log_q, const Tensor& log_p);

// Batch-mean cross entropy against (1 - smoothing) * onehot + smoothing / K.
Tensor cross_entropy(Tape* tape, const Tensor& logits, std::span<const int> labels,
                     float smoothing = 0.0f);

// (N,C,H,W) -> (N,HW,HW): tokens along C, L2-normalised (norm + eps), then
// pairwise inner products.
Tensor relation_matrix(Tape* tape, const Tensor& x, float eps = 1e-12f);

Tensor sum(Tape* tape, const Tensor& x);
Tensor mean(Tape* tape, const Tensor& x);

// Floating-point operation tally of the ops executed on this thread while a
// scope is alive. Counts are analytic per op (2mnk per gemm, one per
// elementwise arithmetic operation), independent of the kernel variant.
struct OpCounts {
  std::map<std::string, std::uint64_t> by_op;
  std::uint64_t total() const;
};

class OpCountScope {
 public:
  explicit OpCountScope(OpCounts& sink);
  ~OpCountScope();
  OpCountScope(const OpCountScope&) = delete;
  OpCountScope& operator=(const OpCountScope&) = delete;

 private:
  OpCounts* previous_;
};

}  // namespace riformer::ops
