// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

// Compiled with -mavx2 -mfma. Nothing here may run before dispatch.cpp has
// confirmed the CPU features.

#include <immintrin.h>

#include <cstdint>
#include <vector>

#include "riformer/kernels.hpp"

namespace riformer::kernels {
namespace {

alignas(32) constexpr std::int32_t kMaskTable[16] = {-1, -1, -1, -1, -1, -1, -1, -1,
                                                    0,  0,  0,  0,  0,  0,  0,  0};

inline __m256i tail_mask(int count) {
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(kMaskTable + 8 - count));
}

// Loads `count` (0..8) floats; lanes past count read as zero.
inline __m256 load_n(const float* p, int count) {
  if (count >= 8) return _mm256_loadu_ps(p);
  if (count <= 0) return _mm256_setzero_ps();
  return _mm256_maskload_ps(p, tail_mask(count));
}

inline void store_n(float* p, __m256 v, int count) {
  if (count >= 8) {
    _mm256_storeu_ps(p, v);
  } else if (count > 0) {
    _mm256_maskstore_ps(p, tail_mask(count), v);
  }
}

inline double hsum_pd(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

// Register block of R rows x up to 16 columns of C.
template <int R>
void gemm_block(int k, const float* a, std::ptrdiff_t a_row, std::ptrdiff_t a_col, const float* b,
                int ldb, int width, float beta, float* c, int ldc) {
  __m256 acc0[R];
  __m256 acc1[R];
#pragma GCC unroll 8
  for (int r = 0; r < R; ++r) {
    acc0[r] = _mm256_setzero_ps();
    acc1[r] = _mm256_setzero_ps();
  }
  const int w0 = width < 8 ? width : 8;
  const int w1 = width - 8;
  if (width == 16) {
    for (int p = 0; p < k; ++p) {
      const float* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
      const __m256 b0 = _mm256_loadu_ps(brow);
      const __m256 b1 = _mm256_loadu_ps(brow + 8);
#pragma GCC unroll 8
      for (int r = 0; r < R; ++r) {
        const __m256 av = _mm256_broadcast_ss(a + r * a_row + p * a_col);
        acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
        acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
      }
    }
  } else {
    for (int p = 0; p < k; ++p) {
      const float* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
      const __m256 b0 = load_n(brow, w0);
      const __m256 b1 = load_n(brow + 8, w1);
#pragma GCC unroll 8
      for (int r = 0; r < R; ++r) {
        const __m256 av = _mm256_broadcast_ss(a + r * a_row + p * a_col);
        acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
        acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
      }
    }
  }
  const __m256 vbeta = _mm256_set1_ps(beta);
  for (int r = 0; r < R; ++r) {
    float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
    __m256 out0 = acc0[r];
    __m256 out1 = acc1[r];
    if (beta != 0.0f) {
      out0 = _mm256_fmadd_ps(vbeta, load_n(crow, w0), out0);
      out1 = _mm256_fmadd_ps(vbeta, load_n(crow + 8, w1), out1);
    }
    store_n(crow, out0, w0);
    store_n(crow + 8, out1, w1);
  }
}

void gemm_avx2(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda,
               const float* b, int ldb, float beta, float* c, int ldc) {
  if (m <= 0 || n <= 0) return;
  std::vector<float> packed;
  if (trans_b) {
    // Materialize op(B) as k x n row-major so the inner loop streams rows.
    packed.resize(static_cast<std::size_t>(k) * n);
    for (int j = 0; j < n; ++j) {
      const float* src = b + static_cast<std::ptrdiff_t>(j) * ldb;
      for (int p = 0; p < k; ++p) packed[static_cast<std::size_t>(p) * n + j] = src[p];
    }
    b = packed.data();
    ldb = n;
  }
  const std::ptrdiff_t a_row = trans_a ? 1 : lda;
  const std::ptrdiff_t a_col = trans_a ? lda : 1;
  for (int j = 0; j < n; j += 16) {
    const int width = (n - j) < 16 ? (n - j) : 16;
    int i = 0;
    for (; i + 6 <= m; i += 6) {
      gemm_block<6>(k, a + i * a_row, a_row, a_col, b + j, ldb, width, beta,
                    c + static_cast<std::ptrdiff_t>(i) * ldc + j, ldc);
    }
    for (; i + 4 <= m; i += 4) {
      gemm_block<4>(k, a + i * a_row, a_row, a_col, b + j, ldb, width, beta,
                    c + static_cast<std::ptrdiff_t>(i) * ldc + j, ldc);
    }
    for (; i < m; ++i) {
      gemm_block<1>(k, a + i * a_row, a_row, a_col, b + j, ldb, width, beta,
                    c + static_cast<std::ptrdiff_t>(i) * ldc + j, ldc);
    }
  }
}

template <typename Op>
inline void binary_loop(std::size_t n, const float* a, const float* b, float* out, Op op) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, op(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  const int rest = static_cast<int>(n - i);
  if (rest > 0) store_n(out + i, op(load_n(a + i, rest), load_n(b + i, rest)), rest);
}

void add_avx2(std::size_t n, const float* a, const float* b, float* out) {
  binary_loop(n, a, b, out, [](__m256 x, __m256 y) { return _mm256_add_ps(x, y); });
}

void sub_avx2(std::size_t n, const float* a, const float* b, float* out) {
  binary_loop(n, a, b, out, [](__m256 x, __m256 y) { return _mm256_sub_ps(x, y); });
}

void mul_avx2(std::size_t n, const float* a, const float* b, float* out) {
  binary_loop(n, a, b, out, [](__m256 x, __m256 y) { return _mm256_mul_ps(x, y); });
}

void axpy_avx2(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  binary_loop(n, x, y, y, [va](__m256 xv, __m256 yv) { return _mm256_fmadd_ps(va, xv, yv); });
}

template <typename Op>
inline void unary_loop(std::size_t n, const float* x, float* y, Op op) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, op(_mm256_loadu_ps(x + i)));
  const int rest = static_cast<int>(n - i);
  if (rest > 0) store_n(y + i, op(load_n(x + i, rest)), rest);
}

void scale_shift_avx2(std::size_t n, float scale, float shift, const float* x, float* y) {
  const __m256 vs = _mm256_set1_ps(scale);
  const __m256 vt = _mm256_set1_ps(shift);
  unary_loop(n, x, y, [=](__m256 v) { return _mm256_fmadd_ps(v, vs, vt); });
}

void center_scale_shift_avx2(std::size_t n, float mean, float scale, float shift, const float* x,
                             float* y) {
  const __m256 vm = _mm256_set1_ps(mean);
  const __m256 vs = _mm256_set1_ps(scale);
  const __m256 vt = _mm256_set1_ps(shift);
  unary_loop(n, x, y, [=](__m256 v) { return _mm256_fmadd_ps(_mm256_sub_ps(v, vm), vs, vt); });
}

void affine_mixer_avx2(std::size_t n, float s, float t, const float* m, float* y) {
  const __m256 vs = _mm256_set1_ps(s);
  const __m256 vt = _mm256_set1_ps(t);
  unary_loop(n, m, y, [=](__m256 v) { return _mm256_sub_ps(_mm256_fmadd_ps(vs, v, vt), v); });
}

inline __m256d widen_lo(__m256 v) { return _mm256_cvtps_pd(_mm256_castps256_ps128(v)); }
inline __m256d widen_hi(__m256 v) { return _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)); }

double sum_avx2(std::size_t n, const float* x) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    acc0 = _mm256_add_pd(acc0, widen_lo(v));
    acc1 = _mm256_add_pd(acc1, widen_hi(v));
  }
  double total = hsum_pd(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) total += x[i];
  return total;
}

double sum_sq_dev_avx2(std::size_t n, const float* x, double mean) {
  const __m256d vm = _mm256_set1_pd(mean);
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256d d0 = _mm256_sub_pd(widen_lo(v), vm);
    const __m256d d1 = _mm256_sub_pd(widen_hi(v), vm);
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  double total = hsum_pd(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = x[i] - mean;
    total += d * d;
  }
  return total;
}

double dot_avx2(std::size_t n, const float* a, const float* b) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 va = _mm256_loadu_ps(a + i);
    const __m256 vb = _mm256_loadu_ps(b + i);
    acc0 = _mm256_fmadd_pd(widen_lo(va), widen_lo(vb), acc0);
    acc1 = _mm256_fmadd_pd(widen_hi(va), widen_hi(vb), acc1);
  }
  double total = hsum_pd(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) total += static_cast<double>(a[i]) * b[i];
  return total;
}

// Cephes-style expf: range reduction by ln2, degree-5 polynomial, 2^n by
// exponent-field construction. Relative error ~2 ulp on [-87, 88].
inline __m256 exp_ps(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647949f);
  const __m256 lo = _mm256_set1_ps(-87.3365447504f);
  x = _mm256_max_ps(_mm256_min_ps(x, hi), lo);
  const __m256 fx = _mm256_round_ps(_mm256_mul_ps(x, _mm256_set1_ps(1.44269504088896341f)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), x);
  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, _mm256_mul_ps(x, x), _mm256_add_ps(x, _mm256_set1_ps(1.0f)));
  __m256i e = _mm256_add_epi32(_mm256_cvtps_epi32(fx), _mm256_set1_epi32(127));
  e = _mm256_slli_epi32(e, 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(e));
}

// Standard normal CDF through the Abramowitz-Stegun 7.1.26 erf (|err| <= 1.5e-7).
// Also returns exp(-x^2/2) for the derivative.
inline __m256 normal_cdf_ps(__m256 x, __m256* gauss) {
  const __m256 z = _mm256_mul_ps(x, _mm256_set1_ps(0.70710678118654752f));
  const __m256 sign_mask = _mm256_set1_ps(-0.0f);
  const __m256 az = _mm256_andnot_ps(sign_mask, z);
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 t = _mm256_div_ps(one, _mm256_fmadd_ps(_mm256_set1_ps(0.3275911f), az, one));
  __m256 poly = _mm256_set1_ps(1.061405429f);
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(-1.453152027f));
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(1.421413741f));
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(-0.284496736f));
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(0.254829592f));
  poly = _mm256_mul_ps(poly, t);
  const __m256 g = exp_ps(_mm256_sub_ps(_mm256_setzero_ps(), _mm256_mul_ps(az, az)));
  *gauss = g;
  const __m256 erf_abs = _mm256_fnmadd_ps(poly, g, one);
  const __m256 erf = _mm256_or_ps(erf_abs, _mm256_and_ps(sign_mask, z));
  return _mm256_mul_ps(_mm256_set1_ps(0.5f), _mm256_add_ps(one, erf));
}

void gelu_avx2(std::size_t n, const float* x, float* y) {
  unary_loop(n, x, y, [](__m256 v) {
    __m256 g;
    return _mm256_mul_ps(v, normal_cdf_ps(v, &g));
  });
}

void gelu_backward_avx2(std::size_t n, const float* x, const float* dy, float* dx) {
  const __m256 inv_sqrt_2pi = _mm256_set1_ps(0.39894228040143268f);
  auto grad = [&](__m256 v, __m256 d, __m256 acc) {
    __m256 g;
    const __m256 cdf = normal_cdf_ps(v, &g);
    const __m256 deriv = _mm256_fmadd_ps(v, _mm256_mul_ps(inv_sqrt_2pi, g), cdf);
    return _mm256_fmadd_ps(d, deriv, acc);
  };
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(dx + i,
                     grad(_mm256_loadu_ps(x + i), _mm256_loadu_ps(dy + i), _mm256_loadu_ps(dx + i)));
  }
  const int rest = static_cast<int>(n - i);
  if (rest > 0) {
    store_n(dx + i, grad(load_n(x + i, rest), load_n(dy + i, rest), load_n(dx + i, rest)), rest);
  }
}

}  // namespace

const KernelTable* avx2_table_impl() {
  static const KernelTable table{
      Isa::avx2,          "avx2",          gemm_avx2,         add_avx2,
      sub_avx2,           mul_avx2,        axpy_avx2,         scale_shift_avx2,
      center_scale_shift_avx2,             affine_mixer_avx2,
      sum_avx2,           sum_sq_dev_avx2, dot_avx2,
      gelu_avx2,          gelu_backward_avx2,
  };
  return &table;
}

}  // namespace riformer::kernels
