// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "riformer/kernels.hpp"

namespace riformer::kernels {
namespace {

void gemm_ref(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda,
              const float* b, int ldb, float beta, float* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == 0.0f) {
      for (int j = 0; j < n; ++j) crow[j] = 0.0f;
    } else if (beta != 1.0f) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (int p = 0; p < k; ++p) {
      const float av = trans_a ? a[static_cast<std::ptrdiff_t>(p) * lda + i]
                               : a[static_cast<std::ptrdiff_t>(i) * lda + p];
      if (!trans_b) {
        const float* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
      }
    }
  }
}

void add_ref(std::size_t n, const float* a, const float* b, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_ref(std::size_t n, const float* a, const float* b, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_ref(std::size_t n, const float* a, const float* b, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy_ref(std::size_t n, float alpha, const float* x, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_shift_ref(std::size_t n, float scale, float shift, const float* x, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * scale + shift;
}

void center_scale_shift_ref(std::size_t n, float mean, float scale, float shift, const float* x,
                            float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = (x[i] - mean) * scale + shift;
}

void affine_mixer_ref(std::size_t n, float s, float t, const float* m, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = s * m[i] + t - m[i];
}

double sum_ref(std::size_t n, const float* x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double sum_sq_dev_ref(std::size_t n, const float* x, double mean) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - mean;
    acc += d * d;
  }
  return acc;
}

double dot_ref(std::size_t n, const float* a, const float* b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

constexpr float kInvSqrt2 = 0.70710678118654752f;
constexpr float kInvSqrt2Pi = 0.39894228040143268f;

void gelu_ref(std::size_t n, const float* x, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = 0.5f * x[i] * (1.0f + std::erf(x[i] * kInvSqrt2));
}

void gelu_backward_ref(std::size_t n, const float* x, const float* dy, float* dx) {
  for (std::size_t i = 0; i < n; ++i) {
    const float cdf = 0.5f * (1.0f + std::erf(x[i] * kInvSqrt2));
    const float pdf = kInvSqrt2Pi * std::exp(-0.5f * x[i] * x[i]);
    dx[i] += dy[i] * (cdf + x[i] * pdf);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      Isa::scalar,       "scalar",    gemm_ref,  add_ref,
      sub_ref,           mul_ref,     axpy_ref,  scale_shift_ref,
      center_scale_shift_ref,         affine_mixer_ref,
      sum_ref,           sum_sq_dev_ref,         dot_ref,
      gelu_ref,          gelu_backward_ref,
  };
  return table;
}

}  // namespace riformer::kernels
