// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>

namespace riformer {

// Kernel parallelism cap. Defaults to RIFORMER_THREADS when set, else the
// hardware concurrency.
int thread_count();
void set_thread_count(int threads);

// Splits [0, n) into at most thread_count() contiguous chunks. body must
// write disjoint outputs per index; chunking never changes results.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace riformer
