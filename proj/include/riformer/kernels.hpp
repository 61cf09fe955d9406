// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string_view>

namespace riformer::kernels {

enum class Isa { scalar, avx2 };

// Flat-array inner loops. Every entry has a portable scalar reference in
// scalar.cpp; avx2.cpp provides the same contracts with AVX2+FMA. Results of
// the two variants agree to float rounding, not bitwise.
struct KernelTable {
  Isa isa;
  const char* name;

  // C[m x n] = op(A) * op(B) + beta * C, all row-major.
  void (*gemm)(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda,
               const float* b, int ldb, float beta, float* c, int ldc);

  void (*add)(std::size_t n, const float* a, const float* b, float* out);
  void (*sub)(std::size_t n, const float* a, const float* b, float* out);
  void (*mul)(std::size_t n, const float* a, const float* b, float* out);
  // y += alpha * x
  void (*axpy)(std::size_t n, float alpha, const float* x, float* y);
  // y = x * scale + shift
  void (*scale_shift)(std::size_t n, float scale, float shift, const float* x, float* y);
  // y = (x - mean) * scale + shift
  void (*center_scale_shift)(std::size_t n, float mean, float scale, float shift, const float* x,
                             float* y);
  // y = s * m + t - m
  void (*affine_mixer)(std::size_t n, float s, float t, const float* m, float* y);

  double (*sum)(std::size_t n, const float* x);
  double (*sum_sq_dev)(std::size_t n, const float* x, double mean);
  double (*dot)(std::size_t n, const float* a, const float* b);

  void (*gelu)(std::size_t n, const float* x, float* y);
  // dx += dy * gelu'(x)
  void (*gelu_backward)(std::size_t n, const float* x, const float* dy, float* dx);
};

const KernelTable& scalar_table();
// nullptr when the variant was not compiled in or the CPU lacks the features.
const KernelTable* avx2_table();

// Table used by all ops. Chosen once from the CPU features, overridable with
// RIFORMER_KERNELS=scalar|avx2 or select().
const KernelTable& active();
void select(Isa isa);
bool cpu_supports(Isa isa);
std::string_view isa_name(Isa isa);

}  // namespace riformer::kernels
