// Copyright 2026 The dpbert Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPBERT_TENSOR_HPP_
#define DPBERT_TENSOR_HPP_

#include <cmath>
#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <new>
#include <vector>

#include "dpbert/errors.hpp"
#include "dpbert/rng.hpp"

namespace dpbert {

enum class Precision { kFloat32, kFloat64 };

std::string_view precision_name(Precision p);
Precision parse_precision(std::string_view name);

template <typename T>
concept Real = std::is_same_v<T, float> || std::is_same_v<T, double>;

template <Real T>
constexpr Precision precision_of() {
  return std::is_same_v<T, float> ? Precision::kFloat32 : Precision::kFloat64;
}

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Storage aligned to a cache line. Vectorized reductions pick their code
// path from the address, so a fixed alignment keeps results identical from
// run to run.
template <typename T>
struct CacheAlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  CacheAlignedAllocator() = default;
  template <typename U>
  CacheAlignedAllocator(const CacheAlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const CacheAlignedAllocator<U>&) const { return true; }
};

// Dense row-major tensor. Extents are positive and data().size() always
// equals the product of the extents.
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}
  Tensor(Shape shape, const std::vector<T>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != checked_size(shape_)) {
      throw StructuralError("Tensor: data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_string(shape_));
    }
  }

  static constexpr Precision precision() { return precision_of<T>(); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Leading extent and the product of the rest; a rank-1 tensor is one row.
  std::size_t rows() const { return shape_.size() < 2 ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? size() : size() / shape_[0]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& x : data_) x *= s;
    return *this;
  }

  bool operator==(const Tensor& o) const = default;

  void require_same_shape(const Tensor& o, std::string_view what) const {
    if (shape_ != o.shape_) {
      throw StructuralError(std::string(what) + ": shape " + shape_string(shape_) +
                            " vs " + shape_string(o.shape_));
    }
  }

 private:
  static std::size_t checked_size(const Shape& shape) {
    if (shape.empty()) throw StructuralError("Tensor: shape must be nonempty");
    return shape_size(shape);
  }

  Shape shape_;
  std::vector<T, CacheAlignedAllocator<T>> data_;
};

// i.i.d. N(0, scale^2) draws. Element k takes normal draw `offset + k` of the
// stream, so a list of tensors filled with consecutive offsets equals one
// draw over their concatenation.
template <Real T>
Tensor<T> gaussian_noise(const Shape& shape, double scale, const RngStream& stream,
                         std::uint64_t offset = 0);

// Square root of the sum of squares over every element of every tensor,
// accumulated in 64-bit.
template <Real T>
double global_l2_norm(std::span<const Tensor<T>> tensors);

// Scales every tensor in place by min(1, C / global norm) and returns the
// factor applied. The result's recomputed norm never exceeds C, which also
// makes clipping idempotent bit-for-bit.
template <Real T>
T clip_in_place(std::span<Tensor<T>> tensors, double clip_norm);

template <Real T>
std::vector<Tensor<T>> clip_to_norm(std::span<const Tensor<T>> tensors, double clip_norm) {
  std::vector<Tensor<T>> out(tensors.begin(), tensors.end());
  clip_in_place<T>(out, clip_norm);
  return out;
}

template <Real T>
bool all_finite(std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace dpbert

#endif  // DPBERT_TENSOR_HPP_
