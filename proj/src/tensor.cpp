// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/tensor.hpp"

#include <cmath>
#include <sstream>

namespace riformer {

Shape::Shape(std::initializer_list<std::int64_t> dims) : dims_(dims) {
  for (auto d : dims_) {
    if (d < 0) throw ShapeError("negative extent in shape " + str());
  }
}

Shape::Shape(std::vector<std::int64_t> dims) : dims_(std::move(dims)) {
  for (auto d : dims_) {
    if (d < 0) throw ShapeError("negative extent in shape " + str());
  }
}

std::int64_t Shape::numel() const {
  std::int64_t n = 1;
  for (auto d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ',';
    os << dims_[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<Impl>()) {
  impl_->data.assign(static_cast<std::size_t>(shape.numel()), fill);
  impl_->shape = std::move(shape);
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape.str());
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  return t;
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{1}, value); }

const Shape& Tensor::shape() const {
  if (!impl_) throw ShapeError("use of an undefined tensor");
  return impl_->shape;
}

std::span<float> Tensor::data() {
  if (!impl_) throw ShapeError("use of an undefined tensor");
  return impl_->data;
}

std::span<const float> Tensor::data() const {
  if (!impl_) throw ShapeError("use of an undefined tensor");
  return impl_->data;
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw ShapeError("use of an undefined tensor");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<float> Tensor::grad() const {
  if (!impl_) throw ShapeError("use of an undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

void Tensor::clear_grad() {
  if (impl_) {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

Tensor Tensor::clone() const {
  Tensor t = Tensor::from(shape(), impl_->data);
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

std::uint64_t Tensor::producer() const { return impl_ ? impl_->producer : 0; }

void Tensor::set_producer(std::uint64_t tag) {
  if (!impl_) throw ShapeError("use of an undefined tensor");
  impl_->producer = tag;
}

void Tensor::check_finite(std::string_view what) const {
  const auto values = data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << "non-finite value " << values[i] << " at flat index " << i << " in " << what
         << " of shape " << shape().str();
      throw NumericError(os.str());
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (t.shape().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     t.shape().str());
  }
}

}  // namespace riformer
