// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "riformer/kernels.hpp"

using namespace riformer::kernels;

namespace {

std::vector<float> randv(std::size_t n, std::mt19937_64& rng, float scale = 1.0f) {
  std::normal_distribution<float> g(0.0f, scale);
  std::vector<float> v(n);
  for (float& x : v) x = g(rng);
  return v;
}

void close(const std::vector<float>& a, const std::vector<float>& b, double rel, double abs_floor = 1e-6) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double tol = abs_floor + rel * std::max(std::fabs(a[i]), std::fabs(b[i]));
    if (std::fabs(a[i] - b[i]) > tol) {
      FAIL("index " << i << ": " << a[i] << " vs " << b[i]);
    }
  }
}

const KernelTable* vec() {
  const KernelTable* t = avx2_table();
  if (t == nullptr) MESSAGE("AVX2 variant unavailable on this host; equivalence checks skipped");
  return t;
}

}  // namespace

TEST_CASE("scalar table is always present and named") {
  CHECK(scalar_table().isa == Isa::scalar);
  CHECK(isa_name(Isa::scalar) == "scalar");
  CHECK(cpu_supports(Isa::scalar));
}

TEST_CASE("select switches the active table") {
  const Isa before = active().isa;
  select(Isa::scalar);
  CHECK(active().isa == Isa::scalar);
  if (avx2_table() != nullptr) {
    select(Isa::avx2);
    CHECK(active().isa == Isa::avx2);
  }
  select(before);
}

TEST_CASE("elementwise kernels: avx2 matches scalar on every tail length") {
  const KernelTable* v = vec();
  if (v == nullptr) return;
  const KernelTable& s = scalar_table();
  std::mt19937_64 rng(3);
  for (std::size_t n = 0; n < 70; ++n) {
    const auto a = randv(n, rng), b = randv(n, rng);
    std::vector<float> o1(n), o2(n);
    s.add(n, a.data(), b.data(), o1.data());
    v->add(n, a.data(), b.data(), o2.data());
    CHECK(o1 == o2);
    s.sub(n, a.data(), b.data(), o1.data());
    v->sub(n, a.data(), b.data(), o2.data());
    CHECK(o1 == o2);
    s.mul(n, a.data(), b.data(), o1.data());
    v->mul(n, a.data(), b.data(), o2.data());
    CHECK(o1 == o2);

    std::vector<float> y1 = b, y2 = b;
    s.axpy(n, 0.37f, a.data(), y1.data());
    v->axpy(n, 0.37f, a.data(), y2.data());
    close(y1, y2, 1e-6);

    s.scale_shift(n, 1.3f, -0.2f, a.data(), o1.data());
    v->scale_shift(n, 1.3f, -0.2f, a.data(), o2.data());
    close(o1, o2, 1e-6);
    s.center_scale_shift(n, 0.1f, 1.3f, -0.2f, a.data(), o1.data());
    v->center_scale_shift(n, 0.1f, 1.3f, -0.2f, a.data(), o2.data());
    close(o1, o2, 1e-6);
    s.affine_mixer(n, 1.7f, 0.3f, a.data(), o1.data());
    v->affine_mixer(n, 1.7f, 0.3f, a.data(), o2.data());
    close(o1, o2, 1e-6);

    CHECK(s.sum(n, a.data()) == doctest::Approx(v->sum(n, a.data())).epsilon(1e-9));
    CHECK(s.dot(n, a.data(), b.data()) == doctest::Approx(v->dot(n, a.data(), b.data())).epsilon(1e-9));
    CHECK(s.sum_sq_dev(n, a.data(), 0.25) == doctest::Approx(v->sum_sq_dev(n, a.data(), 0.25)).epsilon(1e-9));

    const auto x = randv(n, rng, 3.0f);
    s.gelu(n, x.data(), o1.data());
    v->gelu(n, x.data(), o2.data());
    close(o1, o2, 2e-6, 1e-6);
    std::vector<float> d1(n, 0.5f), d2(n, 0.5f);
    s.gelu_backward(n, x.data(), b.data(), d1.data());
    v->gelu_backward(n, x.data(), b.data(), d2.data());
    close(d1, d2, 2e-6, 1e-6);
  }
}

TEST_CASE("gemm: avx2 matches scalar for all transpose modes and ragged sizes") {
  const KernelTable* v = vec();
  if (v == nullptr) return;
  const KernelTable& s = scalar_table();
  std::mt19937_64 rng(11);
  const int sizes[][3] = {{1, 1, 1}, {3, 5, 7}, {6, 17, 9}, {13, 8, 33}, {7, 31, 64}, {32, 40, 24}, {50, 3, 100}};
  for (const auto& mnk : sizes) {
    const int m = mnk[0], n = mnk[1], k = mnk[2];
    for (int mode = 0; mode < 4; ++mode) {
      const bool ta = mode & 1, tb = mode & 2;
      const auto a = randv(static_cast<std::size_t>(m) * k, rng);
      const auto b = randv(static_cast<std::size_t>(k) * n, rng);
      const int lda = ta ? m : k, ldb = tb ? k : n;
      for (float beta : {0.0f, 1.0f}) {
        auto c1 = randv(static_cast<std::size_t>(m) * n, rng);
        auto c2 = c1;
        s.gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, beta, c1.data(), n);
        v->gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, beta, c2.data(), n);
        close(c1, c2, 1e-5, 1e-5 * std::sqrt(static_cast<double>(k)));
      }
    }
  }
}

TEST_CASE("gemm scalar reference against a naive triple loop") {
  std::mt19937_64 rng(5);
  const int m = 4, n = 3, k = 5;
  const auto a = randv(m * k, rng), b = randv(k * n, rng);
  std::vector<float> c(m * n, 0.0f);
  scalar_table().gemm(false, false, m, n, k, a.data(), k, b.data(), n, 0.0f, c.data(), n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += static_cast<double>(a[i * k + p]) * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(acc).epsilon(1e-5));
    }
  }
}
