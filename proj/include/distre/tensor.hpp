// Copyright 2026 The DistRE Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "distre/error.hpp"

namespace distre {

using Shape = std::vector<std::size_t>;

// Per-position flags; nonzero means the position counts toward a loss.
using LossMask = std::vector<std::uint8_t>;

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Dense row-major array. Rank-1 tensors behave as a single row wherever an
// operation expects a matrix.
template <std::floating_point Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

  Tensor(Shape shape, std::vector<Real> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != element_count(shape_)) {
      throw ShapeError(detail::concat("tensor of shape ", shape_string(shape_),
                                      " needs ", element_count(shape_),
                                      " values, got ", values_.size()));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, Real fill = Real(0)) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor row(std::vector<Real> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  static Tensor scalar(Real v) { return Tensor({1, 1}, std::vector<Real>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::size_t rows() const noexcept {
    return shape_.size() >= 2 ? shape_[0] : (shape_.empty() ? 0 : 1);
  }
  std::size_t cols() const noexcept {
    return shape_.empty() ? 0 : shape_.back();
  }

  Real* data() noexcept { return values_.data(); }
  const Real* data() const noexcept { return values_.data(); }
  std::span<Real> values() noexcept { return values_; }
  std::span<const Real> values() const noexcept { return values_; }

  Real& operator[](std::size_t i) noexcept { return values_[i]; }
  Real operator[](std::size_t i) const noexcept { return values_[i]; }

  Real& at(std::size_t r, std::size_t c) noexcept { return values_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const noexcept {
    return values_[r * cols() + c];
  }

  std::span<Real> row_span(std::size_t r) noexcept {
    return {values_.data() + r * cols(), cols()};
  }
  std::span<const Real> row_span(std::size_t r) const noexcept {
    return {values_.data() + r * cols(), cols()};
  }

  void fill(Real v) { std::fill(values_.begin(), values_.end(), v); }
  void zero() { fill(Real(0)); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](Real v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }

  void require_same_shape(const Tensor& other, const char* what) const {
    if (other.shape_ != shape_) {
      throw ShapeError(detail::concat(what, ": expected shape ", shape_string(shape_),
                                      ", got ", shape_string(other.shape_)));
    }
  }

  template <std::floating_point Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, std::vector<Other>(values_.begin(), values_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  static std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  Shape shape_;
  std::vector<Real> values_;
};

template <std::floating_point Real, typename Rng>
void fill_normal(Tensor<Real>& t, Real stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : t.values()) v = static_cast<Real>(dist(rng));
}

template <std::floating_point Real>
Real dot(std::span<const Real> a, std::span<const Real> b) {
  Real acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace distre
