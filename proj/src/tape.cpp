// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/tape.hpp"

#include <atomic>

namespace riformer {
namespace {

std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace

Tape::Tape() : generation_(next_generation()) {}

bool Tape::wants(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void Tape::record(Tensor& output, std::function<void()> backward) {
  if (consumed_) throw AutodiffError("recording on a tape that was already differentiated; reset it");
  output.set_requires_grad(true);
  output.set_producer(generation_);
  entries_.push_back(Entry{output, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw AutodiffError("second backward on the same recording without reset()");
  if (!loss.defined() || loss.numel() != 1) {
    throw AutodiffError("backward needs a scalar loss");
  }
  if (loss.producer() != generation_) {
    throw AutodiffError("backward through a tensor that was not recorded on this tape");
  }
  consumed_ = true;
  loss.grad()[0] += 1.0f;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward();
  }
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
  generation_ = next_generation();
}

}  // namespace riformer
