// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <vector>

#include "riformer/tensor.hpp"

namespace riformer {

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Define-by-run reverse-mode recorder. Ops append a closure per recorded
// kernel application; backward() replays them in reverse. A recording may be
// differentiated once, then must be reset(). Not thread-safe: one thread of
// control per tape.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // True when an op with these inputs must be recorded on `tape`.
  static bool wants(const Tape* tape, std::initializer_list<const Tensor*> inputs);

  void record(Tensor& output, std::function<void()> backward);
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  std::uint64_t generation() const { return generation_; }

 private:
  struct Entry {
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
  std::uint64_t generation_;
  bool consumed_ = false;
};

}  // namespace riformer
