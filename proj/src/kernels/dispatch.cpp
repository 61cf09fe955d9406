// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "riformer/kernels.hpp"

namespace riformer::kernels {

#if RIFORMER_HAS_AVX2
const KernelTable* avx2_table_impl();
#endif

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if RIFORMER_HAS_AVX2 && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable* avx2_table() {
#if RIFORMER_HAS_AVX2
  if (cpu_supports(Isa::avx2)) return avx2_table_impl();
#endif
  return nullptr;
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

namespace {

const KernelTable* initial_table() {
  if (const char* env = std::getenv("RIFORMER_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2") {
      if (const KernelTable* t = avx2_table()) return t;
      throw std::runtime_error("RIFORMER_KERNELS=avx2 but AVX2/FMA is unavailable");
    }
    if (!want.empty() && want != "auto") {
      throw std::runtime_error("RIFORMER_KERNELS must be scalar, avx2 or auto, got '" + want + "'");
    }
  }
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void select(Isa isa) {
  if (isa == Isa::scalar) {
    current().store(&scalar_table());
    return;
  }
  const KernelTable* t = avx2_table();
  if (t == nullptr) throw std::runtime_error("AVX2/FMA kernels unavailable on this build or CPU");
  current().store(t);
}

}  // namespace riformer::kernels
