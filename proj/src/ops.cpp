// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "riformer/kernels.hpp"
#include "riformer/parallel.hpp"

namespace riformer::ops {
namespace {

thread_local OpCounts* g_counts = nullptr;

void tally(const char* op, std::uint64_t flops) {
  if (g_counts != nullptr) g_counts->by_op[op] += flops;
}

const kernels::KernelTable& K() { return kernels::active(); }

std::size_t count(const Tensor& t) { return static_cast<std::size_t>(t.numel()); }

struct Planes {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t hw = 0;
};

// Views a rank>=2 tensor as N x C x (rest).
Planes planes_of(const Tensor& x, std::string_view op) {
  if (x.shape().rank() < 2) throw ShapeError(std::string(op) + ": need rank >= 2, got " + x.shape().str());
  Planes p;
  p.n = x.dim(0);
  p.c = x.dim(1);
  p.hw = p.n * p.c == 0 ? 0 : x.numel() / (p.n * p.c);
  return p;
}

void require_channel_vector(const Tensor& v, std::int64_t c, std::string_view op, std::string_view name) {
  if (v.shape().rank() != 1 || v.dim(0) != c) {
    throw ShapeError(std::string(op) + ": " + std::string(name) + " must have shape (" + std::to_string(c) +
                     "), got " + v.shape().str());
  }
}

}  // namespace

std::uint64_t OpCounts::total() const {
  std::uint64_t t = 0;
  for (const auto& [name, flops] : by_op) t += flops;
  return t;
}

OpCountScope::OpCountScope(OpCounts& sink) : previous_(g_counts) { g_counts = &sink; }
OpCountScope::~OpCountScope() { g_counts = previous_; }

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  K().add(count(a), a.ptr(), b.ptr(), out.ptr());
  tally("add", count(a));
  if (Tape::wants(tape, {&a, &b})) {
    tape->record(out, [a, b, out] {
      const auto dy = out.grad();
      if (a.requires_grad()) K().axpy(dy.size(), 1.0f, dy.data(), a.grad().data());
      if (b.requires_grad()) K().axpy(dy.size(), 1.0f, dy.data(), b.grad().data());
    });
  }
  return out;
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  K().sub(count(a), a.ptr(), b.ptr(), out.ptr());
  tally("sub", count(a));
  if (Tape::wants(tape, {&a, &b})) {
    tape->record(out, [a, b, out] {
      const auto dy = out.grad();
      if (a.requires_grad()) K().axpy(dy.size(), 1.0f, dy.data(), a.grad().data());
      if (b.requires_grad()) K().axpy(dy.size(), -1.0f, dy.data(), b.grad().data());
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  K().mul(count(a), a.ptr(), b.ptr(), out.ptr());
  tally("mul", count(a));
  if (Tape::wants(tape, {&a, &b})) {
    tape->record(out, [a, b, out] {
      const auto dy = out.grad();
      std::vector<float> tmp(dy.size());
      if (a.requires_grad()) {
        K().mul(dy.size(), dy.data(), b.ptr(), tmp.data());
        K().axpy(dy.size(), 1.0f, tmp.data(), a.grad().data());
      }
      if (b.requires_grad()) {
        K().mul(dy.size(), dy.data(), a.ptr(), tmp.data());
        K().axpy(dy.size(), 1.0f, tmp.data(), b.grad().data());
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& x, float factor) {
  Tensor out(x.shape());
  K().scale_shift(count(x), factor, 0.0f, x.ptr(), out.ptr());
  tally("scale", count(x));
  if (Tape::wants(tape, {&x})) {
    tape->record(out, [x, out, factor] {
      const auto dy = out.grad();
      K().axpy(dy.size(), factor, dy.data(), x.grad().data());
    });
  }
  return out;
}

Tensor channel_scale(Tape* tape, const Tensor& x, const Tensor& v) {
  const Planes p = planes_of(x, "channel_scale");
  require_channel_vector(v, p.c, "channel_scale", "v");
  Tensor out(x.shape());
  const std::size_t hw = static_cast<std::size_t>(p.hw);
  for (std::int64_t n = 0; n < p.n; ++n) {
    for (std::int64_t c = 0; c < p.c; ++c) {
      const std::size_t off = static_cast<std::size_t>(n * p.c + c) * hw;
      K().scale_shift(hw, v.data()[c], 0.0f, x.ptr() + off, out.ptr() + off);
    }
  }
  tally("channel_scale", count(x));
  if (Tape::wants(tape, {&x, &v})) {
    tape->record(out, [x, v, out, p, hw] {
      const auto dy = out.grad();
      for (std::int64_t n = 0; n < p.n; ++n) {
        for (std::int64_t c = 0; c < p.c; ++c) {
          const std::size_t off = static_cast<std::size_t>(n * p.c + c) * hw;
          if (x.requires_grad()) K().axpy(hw, v.data()[c], dy.data() + off, x.grad().data() + off);
          if (v.requires_grad()) {
            v.grad()[c] += static_cast<float>(K().dot(hw, dy.data() + off, x.ptr() + off));
          }
        }
      }
    });
  }
  return out;
}

Tensor affine_mixer(Tape* tape, const Tensor& m, const Tensor& s, const Tensor& t) {
  const Planes p = planes_of(m, "affine_mixer");
  require_channel_vector(s, p.c, "affine_mixer", "s");
  require_channel_vector(t, p.c, "affine_mixer", "t");
  Tensor out(m.shape());
  const std::size_t hw = static_cast<std::size_t>(p.hw);
  for (std::int64_t n = 0; n < p.n; ++n) {
    for (std::int64_t c = 0; c < p.c; ++c) {
      const std::size_t off = static_cast<std::size_t>(n * p.c + c) * hw;
      K().affine_mixer(hw, s.data()[c], t.data()[c], m.ptr() + off, out.ptr() + off);
    }
  }
  tally("affine_mixer", 3 * count(m));
  if (Tape::wants(tape, {&m, &s, &t})) {
    tape->record(out, [m, s, t, out, p, hw] {
      const auto dy = out.grad();
      for (std::int64_t n = 0; n < p.n; ++n) {
        for (std::int64_t c = 0; c < p.c; ++c) {
          const std::size_t off = static_cast<std::size_t>(n * p.c + c) * hw;
          if (m.requires_grad()) {
            K().axpy(hw, s.data()[c] - 1.0f, dy.data() + off, m.grad().data() + off);
          }
          if (s.requires_grad()) s.grad()[c] += static_cast<float>(K().dot(hw, dy.data() + off, m.ptr() + off));
          if (t.requires_grad()) t.grad()[c] += static_cast<float>(K().sum(hw, dy.data() + off));
        }
      }
    });
  }
  return out;
}

Tensor group_norm1(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank(x, 4, "group_norm1");
  if (!(eps > 0.0f)) throw ShapeError("group_norm1: eps must be > 0");
  const Planes p = planes_of(x, "group_norm1");
  require_channel_vector(gamma, p.c, "group_norm1", "gamma");
  require_channel_vector(beta, p.c, "group_norm1", "beta");
  const std::size_t hw = static_cast<std::size_t>(p.hw);
  const std::size_t per_sample = static_cast<std::size_t>(p.c) * hw;
  std::vector<double> mean(static_cast<std::size_t>(p.n));
  std::vector<double> rstd(static_cast<std::size_t>(p.n));
  for (std::int64_t n = 0; n < p.n; ++n) {
    const float* xs = x.ptr() + n * per_sample;
    const double s = K().sum(per_sample, xs);
    if (!std::isfinite(s)) throw NumericError("group_norm1: non-finite input in sample " + std::to_string(n));
    const double mu = s / static_cast<double>(per_sample);
    const double var = K().sum_sq_dev(per_sample, xs, mu) / static_cast<double>(per_sample);
    mean[n] = mu;
    rstd[n] = 1.0 / std::sqrt(var + eps);
  }
  Tensor out(x.shape());
  parallel_for(p.n, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t n = begin; n < end; ++n) {
      for (std::int64_t c = 0; c < p.c; ++c) {
        const std::size_t off = n * per_sample + c * hw;
        K().center_scale_shift(hw, static_cast<float>(mean[n]),
                               static_cast<float>(gamma.data()[c] * rstd[n]), beta.data()[c],
                               x.ptr() + off, out.ptr() + off);
      }
    }
  });
  tally("group_norm1", 7 * count(x));
  if (Tape::wants(tape, {&x, &gamma, &beta})) {
    tape->record(out, [x, gamma, beta, out, p, hw, per_sample, mean, rstd] {
      const auto dy = out.grad();
      std::vector<double> sdy(static_cast<std::size_t>(p.c));
      std::vector<double> sdyxhat(static_cast<std::size_t>(p.c));
      for (std::int64_t n = 0; n < p.n; ++n) {
        const double mu = mean[n];
        const double rs = rstd[n];
        double a_mean = 0.0;  // mean of dxhat
        double b_mean = 0.0;  // mean of dxhat * xhat
        for (std::int64_t c = 0; c < p.c; ++c) {
          const std::size_t off = n * per_sample + c * hw;
          const double s1 = K().sum(hw, dy.data() + off);
          const double sx = K().dot(hw, dy.data() + off, x.ptr() + off);
          sdy[c] = s1;
          sdyxhat[c] = (sx - mu * s1) * rs;
          a_mean += gamma.data()[c] * sdy[c];
          b_mean += gamma.data()[c] * sdyxhat[c];
        }
        a_mean /= static_cast<double>(per_sample);
        b_mean /= static_cast<double>(per_sample);
        for (std::int64_t c = 0; c < p.c; ++c) {
          if (gamma.requires_grad()) gamma.grad()[c] += static_cast<float>(sdyxhat[c]);
          if (beta.requires_grad()) beta.grad()[c] += static_cast<float>(sdy[c]);
        }
        if (!x.requires_grad()) continue;
        float* dx = x.grad().data();
        const float coef_x = static_cast<float>(-rs * rs * b_mean);
        const float coef_0 = static_cast<float>(rs * rs * b_mean * mu - rs * a_mean);
        for (std::int64_t c = 0; c < p.c; ++c) {
          const std::size_t off = n * per_sample + c * hw;
          const float coef_dy = static_cast<float>(rs * gamma.data()[c]);
          const float* dyp = dy.data() + off;
          const float* xp = x.ptr() + off;
          float* dxp = dx + off;
          for (std::size_t i = 0; i < hw; ++i) dxp[i] += coef_dy * dyp[i] + coef_x * xp[i] + coef_0;
        }
      }
    });
  }
  return out;
}

namespace {

// Same-size box sum with window k (odd), accumulated in double so that a
// constant plane sums exactly.
void box_sum(const float* src, std::int64_t h, std::int64_t w, int k, std::vector<double>& rows,
             double* dst) {
  const std::int64_t r = (k - 1) / 2;
  rows.assign(static_cast<std::size_t>(h * w), 0.0);
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      double acc = 0.0;
      const std::int64_t lo = std::max<std::int64_t>(0, j - r);
      const std::int64_t hi = std::min<std::int64_t>(w - 1, j + r);
      for (std::int64_t q = lo; q <= hi; ++q) acc += src[i * w + q];
      rows[i * w + j] = acc;
    }
  }
  for (std::int64_t i = 0; i < h; ++i) {
    const std::int64_t lo = std::max<std::int64_t>(0, i - r);
    const std::int64_t hi = std::min<std::int64_t>(h - 1, i + r);
    for (std::int64_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (std::int64_t q = lo; q <= hi; ++q) acc += rows[q * w + j];
      dst[i * w + j] = acc;
    }
  }
}

std::int64_t valid_count(std::int64_t i, std::int64_t extent, int k) {
  const std::int64_t r = (k - 1) / 2;
  return std::min<std::int64_t>(extent - 1, i + r) - std::max<std::int64_t>(0, i - r) + 1;
}

}  // namespace

Tensor avg_pool_same(Tape* tape, const Tensor& x, int k) {
  require_rank(x, 4, "avg_pool_same");
  if (k < 1 || k % 2 == 0) throw ShapeError("avg_pool_same: window must be odd and >= 1, got " + std::to_string(k));
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t h = x.dim(2);
  const std::int64_t w = x.dim(3);
  Tensor out(x.shape());
  parallel_for(planes, [&](std::int64_t begin, std::int64_t end) {
    std::vector<double> rows;
    std::vector<double> sums(static_cast<std::size_t>(h * w));
    for (std::int64_t pl = begin; pl < end; ++pl) {
      box_sum(x.ptr() + pl * h * w, h, w, k, rows, sums.data());
      float* o = out.ptr() + pl * h * w;
      for (std::int64_t i = 0; i < h; ++i) {
        const std::int64_t ch = valid_count(i, h, k);
        for (std::int64_t j = 0; j < w; ++j) {
          o[i * w + j] = static_cast<float>(sums[i * w + j] / static_cast<double>(ch * valid_count(j, w, k)));
        }
      }
    }
  });
  tally("avg_pool", static_cast<std::uint64_t>(2 * k + 1) * count(x));
  if (Tape::wants(tape, {&x})) {
    tape->record(out, [x, out, planes, h, w, k] {
      const auto dy = out.grad();
      std::vector<float> scaled(static_cast<std::size_t>(h * w));
      std::vector<double> rows;
      std::vector<double> sums(static_cast<std::size_t>(h * w));
      float* dx = x.grad().data();
      for (std::int64_t pl = 0; pl < planes; ++pl) {
        const float* g = dy.data() + pl * h * w;
        for (std::int64_t i = 0; i < h; ++i) {
          const std::int64_t ch = valid_count(i, h, k);
          for (std::int64_t j = 0; j < w; ++j) {
            scaled[i * w + j] = g[i * w + j] / static_cast<float>(ch * valid_count(j, w, k));
          }
        }
        box_sum(scaled.data(), h, w, k, rows, sums.data());
        float* d = dx + pl * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) d[i] += static_cast<float>(sums[i]);
      }
    });
  }
  return out;
}

Tensor pooling_mixer(Tape* tape, const Tensor& m, int k) { return sub(tape, avg_pool_same(tape, m, k), m); }

Tensor pointwise_linear(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(w, 2, "pointwise_linear");
  const std::int64_t out_c = w.dim(0);
  const std::int64_t in_c = w.dim(1);
  require_channel_vector(b, out_c, "pointwise_linear", "bias");
  const std::size_t rank = x.shape().rank();
  if ((rank != 2 && rank != 4) || x.dim(1) != in_c) {
    throw ShapeError("pointwise_linear: input " + x.shape().str() + " incompatible with weight " + w.shape().str());
  }
  const std::int64_t n = x.dim(0);
  const std::int64_t hw = rank == 4 ? x.dim(2) * x.dim(3) : 1;
  Tensor out = rank == 4 ? Tensor(Shape{n, out_c, x.dim(2), x.dim(3)}) : Tensor(Shape{n, out_c});
  const int O = static_cast<int>(out_c);
  const int C = static_cast<int>(in_c);
  const int P = static_cast<int>(hw);
  if (rank == 4) {
    parallel_for(n, [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t s = begin; s < end; ++s) {
        float* y = out.ptr() + s * out_c * hw;
        for (std::int64_t o = 0; o < out_c; ++o) std::fill_n(y + o * hw, hw, b.data()[o]);
        K().gemm(false, false, O, P, C, w.ptr(), C, x.ptr() + s * in_c * hw, P, 1.0f, y, P);
      }
    });
  } else {
    for (std::int64_t s = 0; s < n; ++s) std::copy_n(b.ptr(), out_c, out.ptr() + s * out_c);
    K().gemm(false, true, static_cast<int>(n), O, C, x.ptr(), C, w.ptr(), C, 1.0f, out.ptr(), O);
  }
  tally("linear", static_cast<std::uint64_t>(2 * n * hw * out_c * in_c + n * hw * out_c));
  if (Tape::wants(tape, {&x, &w, &b})) {
    tape->record(out, [x, w, b, out, rank, n, hw, O, C, P] {
      const auto dy = out.grad();
      if (rank == 4) {
        for (std::int64_t s = 0; s < n; ++s) {
          const float* g = dy.data() + s * O * hw;
          const float* xs = x.ptr() + s * C * hw;
          if (w.requires_grad()) K().gemm(false, true, O, C, P, g, P, xs, P, 1.0f, w.grad().data(), C);
          if (x.requires_grad()) K().gemm(true, false, C, P, O, w.ptr(), C, g, P, 1.0f, x.grad().data() + s * C * hw, P);
          if (b.requires_grad()) {
            for (int o = 0; o < O; ++o) b.grad()[o] += static_cast<float>(K().sum(static_cast<std::size_t>(hw), g + o * hw));
          }
        }
      } else {
        const int N = static_cast<int>(n);
        if (w.requires_grad()) K().gemm(true, false, O, C, N, dy.data(), O, x.ptr(), C, 1.0f, w.grad().data(), C);
        if (x.requires_grad()) K().gemm(false, false, N, C, O, dy.data(), O, w.ptr(), C, 1.0f, x.grad().data(), C);
        if (b.requires_grad()) {
          for (int s = 0; s < N; ++s) K().axpy(static_cast<std::size_t>(O), 1.0f, dy.data() + s * O, b.grad().data());
        }
      }
    });
  }
  return out;
}

namespace {

struct ConvGeometry {
  std::int64_t c, h, w, k, stride, pad, oh, ow;
};

std::int64_t clamp_index(std::int64_t i, std::int64_t extent) { return std::clamp<std::int64_t>(i, 0, extent - 1); }

// cols is (C*k*k) x (oh*ow). Out-of-image taps read 0 (zeros) or the nearest
// edge pixel (replicate).
void im2col(const float* x, const ConvGeometry& g, Padding mode, float* cols) {
  const std::int64_t p = g.oh * g.ow;
  for (std::int64_t c = 0; c < g.c; ++c) {
    const float* plane = x + c * g.h * g.w;
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        float* row = cols + ((c * g.k + ki) * g.k + kj) * p;
        for (std::int64_t oi = 0; oi < g.oh; ++oi) {
          const std::int64_t ii = oi * g.stride - g.pad + ki;
          for (std::int64_t oj = 0; oj < g.ow; ++oj) {
            const std::int64_t jj = oj * g.stride - g.pad + kj;
            float v;
            if (mode == Padding::replicate) {
              v = plane[clamp_index(ii, g.h) * g.w + clamp_index(jj, g.w)];
            } else {
              v = (ii >= 0 && ii < g.h && jj >= 0 && jj < g.w) ? plane[ii * g.w + jj] : 0.0f;
            }
            row[oi * g.ow + oj] = v;
          }
        }
      }
    }
  }
}

void col2im(const float* cols, const ConvGeometry& g, Padding mode, float* dx) {
  const std::int64_t p = g.oh * g.ow;
  for (std::int64_t c = 0; c < g.c; ++c) {
    float* plane = dx + c * g.h * g.w;
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        const float* row = cols + ((c * g.k + ki) * g.k + kj) * p;
        for (std::int64_t oi = 0; oi < g.oh; ++oi) {
          const std::int64_t ii = oi * g.stride - g.pad + ki;
          for (std::int64_t oj = 0; oj < g.ow; ++oj) {
            const std::int64_t jj = oj * g.stride - g.pad + kj;
            if (mode == Padding::replicate) {
              plane[clamp_index(ii, g.h) * g.w + clamp_index(jj, g.w)] += row[oi * g.ow + oj];
            } else if (ii >= 0 && ii < g.h && jj >= 0 && jj < g.w) {
              plane[ii * g.w + jj] += row[oi * g.ow + oj];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding, Padding mode) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d: only square kernels are supported");
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input " + x.shape().str() + " incompatible with weight " + w.shape().str());
  }
  const std::int64_t out_c = w.dim(0);
  require_channel_vector(b, out_c, "conv2d", "bias");
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), stride, padding, 0, 0};
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) throw ShapeError("conv2d: kernel larger than padded input");
  g.oh = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  const std::int64_t n = x.dim(0);
  const std::int64_t p = g.oh * g.ow;
  const std::int64_t ckk = g.c * g.k * g.k;
  Tensor out(Shape{n, out_c, g.oh, g.ow});
  parallel_for(n, [&](std::int64_t begin, std::int64_t end) {
    std::vector<float> cols(static_cast<std::size_t>(ckk * p));
    for (std::int64_t s = begin; s < end; ++s) {
      im2col(x.ptr() + s * g.c * g.h * g.w, g, mode, cols.data());
      float* y = out.ptr() + s * out_c * p;
      for (std::int64_t o = 0; o < out_c; ++o) std::fill_n(y + o * p, p, b.data()[o]);
      K().gemm(false, false, static_cast<int>(out_c), static_cast<int>(p), static_cast<int>(ckk), w.ptr(),
               static_cast<int>(ckk), cols.data(), static_cast<int>(p), 1.0f, y, static_cast<int>(p));
    }
  });
  tally("conv2d", static_cast<std::uint64_t>(2 * n * p * out_c * ckk + n * p * out_c));
  if (Tape::wants(tape, {&x, &w, &b})) {
    tape->record(out, [x, w, b, out, g, mode, n, p, ckk, out_c] {
      const auto dy = out.grad();
      std::vector<float> cols(static_cast<std::size_t>(ckk * p));
      std::vector<float> dcols(static_cast<std::size_t>(ckk * p));
      const int O = static_cast<int>(out_c);
      const int P = static_cast<int>(p);
      const int CKK = static_cast<int>(ckk);
      for (std::int64_t s = 0; s < n; ++s) {
        const float* gy = dy.data() + s * out_c * p;
        if (w.requires_grad()) {
          im2col(x.ptr() + s * g.c * g.h * g.w, g, mode, cols.data());
          K().gemm(false, true, O, CKK, P, gy, P, cols.data(), P, 1.0f, w.grad().data(), CKK);
        }
        if (x.requires_grad()) {
          K().gemm(true, false, CKK, P, O, w.ptr(), CKK, gy, P, 0.0f, dcols.data(), P);
          col2im(dcols.data(), g, mode, x.grad().data() + s * g.c * g.h * g.w);
        }
        if (b.requires_grad()) {
          for (int o = 0; o < O; ++o) b.grad()[o] += static_cast<float>(K().sum(static_cast<std::size_t>(p), gy + o * p));
        }
      }
    });
  }
  return out;
}

Tensor gelu(Tape* tape, const Tensor& x) {
  Tensor out(x.shape());
  parallel_for(x.dim(0), [&](std::int64_t begin, std::int64_t end) {
    const std::int64_t per = x.numel() / x.dim(0);
    K().gelu(static_cast<std::size_t>((end - begin) * per), x.ptr() + begin * per, out.ptr() + begin * per);
  });
  tally("gelu", 8 * count(x));
  if (Tape::wants(tape, {&x})) {
    tape->record(out, [x, out] {
      const auto dy = out.grad();
      K().gelu_backward(dy.size(), x.ptr(), dy.data(), x.grad().data());
    });
  }
  return out;
}

Tensor spatial_mean(Tape* tape, const Tensor& x) {
  require_rank(x, 4, "spatial_mean");
  const std::int64_t n = x.dim(0);
  const std::int64_t c = x.dim(1);
  const std::int64_t hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw ShapeError("spatial_mean: empty spatial extent");
  Tensor out(Shape{n, c});
  for (std::int64_t i = 0; i < n * c; ++i) {
    out.data()[i] = static_cast<float>(K().sum(static_cast<std::size_t>(hw), x.ptr() + i * hw) / static_cast<double>(hw));
  }
  tally("spatial_mean", count(x));
  if (Tape::wants(tape, {&x})) {
    tape->record(out, [x, out, n, c, hw] {
      const auto dy = out.grad();
      float* dx = x.grad().data();
      for (std::int64_t i = 0; i < n * c; ++i) {
        const float g = dy[i] / static_cast<float>(hw);
        for (std::int64_t j = 0; j < hw; ++j) dx[i * hw + j] += g;
      }
    });
  }
  return out;
}

Tensor spatial_point_sum(Tape* tape, const Tensor& x, std::int64_t h, std::int64_t w) {
  require_rank(x, 4, "spatial_point_sum");
  if (h < 0 || h >= x.dim(2) || w < 0 || w >= x.dim(3)) {
    throw ShapeError("spatial_point_sum: position out of range for " + x.shape().str());
  }
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t hw = x.dim(2) * x.dim(3);
  const std::int64_t at = h * x.dim(3) + w;
  double acc = 0.0;
  for (std::int64_t pl = 0; pl < planes; ++pl) acc += x.data()[pl * hw + at];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (Tape::wants(tape, {&x})) {
    tape->record(out, [x, out, planes, hw, at] {
      const float g = out.grad()[0];
      float* dx = x.grad().data();
      for (std::int64_t pl = 0; pl < planes; ++pl) dx[pl * hw + at] += g;
    });
  }
  return out;
}

namespace {

void row_log_softmax(const float* x, std::int64_t k, float* out) {
  float mx = -std::numeric_limits<float>::infinity();
  for (std::int64_t j = 0; j < k; ++j) mx = std::max(mx, x[j]);
  double acc = 0.0;
  for (std::int64_t j = 0; j < k; ++j) acc += std::exp(static_cast<double>(x[j]) - mx);
  const double lse = mx + std::log(acc);
  for (std::int64_t j = 0; j < k; ++j) out[j] = static_cast<float>(x[j] - lse);
}

}  // namespace

Tensor log_softmax(Tape* tape, const Tensor& x) {
  require_rank(x, 2, "log_softmax");
  const std::int64_t n = x.dim(0);
  const std::int64_t k = x.dim(1);
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < n; ++i) row_log_softmax(x.ptr() + i * k, k, out.ptr() + i * k);
  tally("log_softmax", 4 * count(x));
  if (Tape::wants(tape, {&x})) {
    tape->record(out, [x, out, n, k] {
      const auto dy = out.grad();
      float* dx = x.grad().data();
      for (std::int64_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (std::int64_t j = 0; j < k; ++j) total += dy[i * k + j];
        for (std::int64_t j = 0; j < k; ++j) {
          dx[i * k + j] += static_cast<float>(dy[i * k + j] - std::exp(static_cast<double>(out.data()[i * k + j])) * total);
        }
      }
    });
  }
  return out;
}

Tensor softmax(Tape* tape, const Tensor& x) {
  require_rank(x, 2, "softmax");
  const std::int64_t n = x.dim(0);
  const std::int64_t k = x.dim(1);
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    row_log_softmax(x.ptr() + i * k, k, out.ptr() + i * k);
    for (std::int64_t j = 0; j < k; ++j) out.data()[i * k + j] = std::exp(out.data()[i * k + j]);
  }
  tally("softmax", 4 * count(x));
  if (Tape::wants(tape, {&x})) {
    tape->record(out, [x, out, n, k] {
      const auto dy = out.grad();
      const auto y = out.data();
      float* dx = x.grad().data();
      for (std::int64_t i = 0; i < n; ++i) {
        double inner = 0.0;
        for (std::int64_t j = 0; j < k; ++j) inner += static_cast<double>(dy[i * k + j]) * y[i * k + j];
        for (std::int64_t j = 0; j < k; ++j) {
          dx[i * k + j] += static_cast<float>(y[i * k + j] * (dy[i * k + j] - inner));
        }
      }
    });
  }
  return out;
}

Tensor mse(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  const std::size_t n = count(a);
  if (n == 0) throw ShapeError("mse: empty tensors");
  double acc = 0.0;
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  tally("mse", 3 * n);
  if (Tape::wants(tape, {&a, &b})) {
    tape->record(out, [a, b, out, n] {
      const float g = out.grad()[0] * 2.0f / static_cast<float>(n);
      std::vector<float> diff(n);
      K().sub(n, a.ptr(), b.ptr(), diff.data());
      if (a.requires_grad()) K().axpy(n, g, diff.data(), a.grad().data());
      if (b.requires_grad()) K().axpy(n, -g, diff.data(), b.grad().data());
    });
  }
  return out;
}

Tensor kl_div(Tape* tape, const Tensor& log_q, const Tensor& p) {
  require_rank(log_q, 2, "kl_div");
  require_same_shape(log_q, p, "kl_div");
  const std::int64_t n = log_q.dim(0);
  if (n == 0) throw ShapeError("kl_div: empty batch");
  const auto lq = log_q.data();
  const auto pv = p.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < lq.size(); ++i) {
    if (pv[i] > 0.0f) acc += static_cast<double>(pv[i]) * (std::log(static_cast<double>(pv[i])) - lq[i]);
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  tally("kl_div", 3 * count(p));
  if (Tape::wants(tape, {&log_q, &p})) {
    tape->record(out, [log_q, p, out, n] {
      const double g = out.grad()[0] / static_cast<double>(n);
      const auto lq = log_q.data();
      const auto pv = p.data();
      if (log_q.requires_grad()) {
        float* d = log_q.grad().data();
        for (std::size_t i = 0; i < lq.size(); ++i) d[i] += static_cast<float>(-g * pv[i]);
      }
      if (p.requires_grad()) {
        float* d = p.grad().data();
        for (std::size_t i = 0; i < lq.size(); ++i) {
          if (pv[i] > 0.0f) d[i] += static_cast<float>(g * (std::log(static_cast<double>(pv[i])) - lq[i] + 1.0));
        }
      }
    });
  }
  return out;
}

Tensor kl_div_log(Tape* tape, const Tensor& log_q, const Tensor& log_p) {
  require_rank(log_q, 2, "kl_div_log");
  require_same_shape(log_q, log_p, "kl_div_log");
  const std::int64_t n = log_q.dim(0);
  if (n == 0) throw ShapeError("kl_div_log: empty batch");
  const auto lq = log_q.data();
  const auto lp = log_p.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < lq.size(); ++i) {
    acc += std::exp(static_cast<double>(lp[i])) * (static_cast<double>(lp[i]) - lq[i]);
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  tally("kl_div", 4 * count(log_p));
  if (Tape::wants(tape, {&log_q, &log_p})) {
    tape->record(out, [log_q, log_p, out, n] {
      const double g = out.grad()[0] / static_cast<double>(n);
      const auto lq = log_q.data();
      const auto lp = log_p.data();
      if (log_q.requires_grad()) {
        float* d = log_q.grad().data();
        for (std::size_t i = 0; i < lq.size(); ++i) d[i] += static_cast<float>(-g * std::exp(static_cast<double>(lp[i])));
      }
      if (log_p.requires_grad()) {
        float* d = log_p.grad().data();
        for (std::size_t i = 0; i < lq.size(); ++i) {
          const double e = std::exp(static_cast<double>(lp[i]));
          d[i] += static_cast<float>(g * e * (static_cast<double>(lp[i]) - lq[i] + 1.0));
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy(Tape* tape, const Tensor& logits, std::span<const int> labels, float smoothing) {
  require_rank(logits, 2, "cross_entropy");
  const std::int64_t n = logits.dim(0);
  const std::int64_t k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) throw ShapeError("cross_entropy: label count != batch size");
  if (n == 0) throw ShapeError("cross_entropy: empty batch");
  if (smoothing < 0.0f || smoothing >= 1.0f) throw ShapeError("cross_entropy: smoothing must be in [0,1)");
  std::vector<float> logp(static_cast<std::size_t>(n * k));
  double acc = 0.0;
  const double off = smoothing / static_cast<double>(k);
  for (std::int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw ShapeError("cross_entropy: label out of range");
    row_log_softmax(logits.ptr() + i * k, k, logp.data() + i * k);
    for (std::int64_t j = 0; j < k; ++j) {
      const double q = off + (j == labels[i] ? 1.0 - smoothing : 0.0);
      acc -= q * logp[i * k + j];
    }
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  tally("cross_entropy", 5 * count(logits));
  if (Tape::wants(tape, {&logits})) {
    std::vector<int> lab(labels.begin(), labels.end());
    tape->record(out, [logits, out, lab = std::move(lab), logp = std::move(logp), n, k, off, smoothing] {
      const double g = out.grad()[0] / static_cast<double>(n);
      float* d = logits.grad().data();
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < k; ++j) {
          const double q = off + (j == lab[i] ? 1.0 - smoothing : 0.0);
          d[i * k + j] += static_cast<float>(g * (std::exp(static_cast<double>(logp[i * k + j])) - q));
        }
      }
    });
  }
  return out;
}

Tensor relation_matrix(Tape* tape, const Tensor& x, float eps) {
  require_rank(x, 4, "relation_matrix");
  const std::int64_t n = x.dim(0);
  const std::int64_t c = x.dim(1);
  const std::int64_t p = x.dim(2) * x.dim(3);
  // Column-normalised copy: token p is column p of the C x P sample matrix.
  Tensor normed(x.shape());
  std::vector<float> denom(static_cast<std::size_t>(n * p));
  std::vector<float> norms(static_cast<std::size_t>(n * p));
  for (std::int64_t s = 0; s < n; ++s) {
    const float* xs = x.ptr() + s * c * p;
    float* ys = normed.ptr() + s * c * p;
    for (std::int64_t j = 0; j < p; ++j) {
      double sq = 0.0;
      for (std::int64_t ch = 0; ch < c; ++ch) sq += static_cast<double>(xs[ch * p + j]) * xs[ch * p + j];
      const double r = std::sqrt(sq);
      norms[s * p + j] = static_cast<float>(r);
      denom[s * p + j] = static_cast<float>(r + eps);
      for (std::int64_t ch = 0; ch < c; ++ch) ys[ch * p + j] = static_cast<float>(xs[ch * p + j] / (r + eps));
    }
  }
  Tensor out(Shape{n, p, p});
  const int P = static_cast<int>(p);
  const int C = static_cast<int>(c);
  for (std::int64_t s = 0; s < n; ++s) {
    const float* ys = normed.ptr() + s * c * p;
    K().gemm(true, false, P, P, C, ys, P, ys, P, 0.0f, out.ptr() + s * p * p, P);
  }
  tally("relation_matrix", static_cast<std::uint64_t>(2 * n * p * p * c + 3 * n * p * c));
  if (Tape::wants(tape, {&x})) {
    tape->record(out, [x, out, normed, denom = std::move(denom), norms = std::move(norms), n, c, p, P, C] {
      const auto dr = out.grad();
      std::vector<float> sym(static_cast<std::size_t>(p * p));
      std::vector<float> dn(static_cast<std::size_t>(c * p));
      float* dx = x.grad().data();
      for (std::int64_t s = 0; s < n; ++s) {
        const float* g = dr.data() + s * p * p;
        for (std::int64_t i = 0; i < p; ++i) {
          for (std::int64_t j = 0; j < p; ++j) sym[i * p + j] = g[i * p + j] + g[j * p + i];
        }
        const float* ys = normed.ptr() + s * c * p;
        K().gemm(false, false, C, P, P, ys, P, sym.data(), P, 0.0f, dn.data(), P);
        const float* xs = x.ptr() + s * c * p;
        float* dxs = dx + s * c * p;
        for (std::int64_t j = 0; j < p; ++j) {
          const double d = denom[s * p + j];
          const double r = norms[s * p + j];
          double ug = 0.0;
          for (std::int64_t ch = 0; ch < c; ++ch) ug += static_cast<double>(xs[ch * p + j]) * dn[ch * p + j];
          const double proj = r > 0.0 ? ug / (r * d * d) : 0.0;
          for (std::int64_t ch = 0; ch < c; ++ch) {
            dxs[ch * p + j] += static_cast<float>(dn[ch * p + j] / d - xs[ch * p + j] * proj);
          }
        }
      }
    });
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
  Tensor out = Tensor::scalar(static_cast<float>(K().sum(count(x), x.ptr())));
  tally("sum", count(x));
  if (Tape::wants(tape, {&x})) {
    tape->record(out, [x, out] {
      const float g = out.grad()[0];
      float* d = x.grad().data();
      for (std::size_t i = 0; i < static_cast<std::size_t>(x.numel()); ++i) d[i] += g;
    });
  }
  return out;
}

Tensor mean(Tape* tape, const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(tape, sum(tape, x), 1.0f / static_cast<float>(x.numel()));
}

}  // namespace riformer::ops
