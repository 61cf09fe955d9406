// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "riformer/kernels.hpp"
#include "support/gradcheck.hpp"

using namespace riformer;

TEST_CASE("finite-difference gradient suite, 10 seeds per kernel") {
  for (const auto& c : testing::gradient_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto r = testing::check_gradient(c, seed);
      INFO(c.name << " seed " << seed << " rel_err " << r.rel_err);
      CHECK(r.rel_err <= 1e-3);
    }
  }
}

TEST_CASE("gradient suite also passes on the scalar kernels") {
  const auto before = kernels::active().isa;
  kernels::select(kernels::Isa::scalar);
  for (const auto& c : testing::gradient_cases()) {
    const auto r = testing::check_gradient(c, 99);
    INFO(c.name << " rel_err " << r.rel_err);
    CHECK(r.rel_err <= 1e-3);
  }
  kernels::select(before);
}
