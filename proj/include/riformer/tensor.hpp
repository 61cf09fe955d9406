// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace riformer {

// Raised for violated preconditions (bad shapes, bad arguments).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a kernel sees or produces NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::int64_t> dims);
  explicit Shape(std::vector<std::int64_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::int64_t operator[](std::size_t i) const { return dims_.at(i); }
  std::int64_t numel() const;
  const std::vector<std::int64_t>& dims() const { return dims_; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::int64_t> dims_;
};

// Dense float32 array with shared (handle) semantics: copies alias the same
// storage, clone() makes an independent copy. 4-D tensors are N,C,H,W.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  static Tensor from(Shape shape, std::vector<float> values);
  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const { return shape().numel(); }
  std::int64_t dim(std::size_t i) const { return shape()[i]; }

  std::span<float> data();
  std::span<const float> data() const;
  float* ptr() { return data().data(); }
  const float* ptr() const { return data().data(); }
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  // Allocates a zero buffer on first use.
  std::span<float> grad() const;
  void zero_grad();
  void clear_grad();

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  std::uint64_t producer() const;
  void set_producer(std::uint64_t tag);

  // Throws NumericError naming `what` on the first non-finite value.
  void check_finite(std::string_view what) const;

 private:
  struct Impl {
    Shape shape;
    std::vector<float> data;
    mutable std::vector<float> grad;
    bool requires_grad = false;
    std::uint64_t producer = 0;
  };
  std::shared_ptr<Impl> impl_;
};

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op);
void require_rank(const Tensor& t, std::size_t rank, std::string_view op);

}  // namespace riformer
