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

#include "dpbert/tensor.hpp"

#include <cmath>
#include <sstream>

namespace dpbert {

std::string_view precision_name(Precision p) {
  return p == Precision::kFloat32 ? "float32" : "float64";
}

Precision parse_precision(std::string_view name) {
  if (name == "float32" || name == "32") return Precision::kFloat32;
  if (name == "float64" || name == "64") return Precision::kFloat64;
  throw ParameterError("unknown precision '" + std::string(name) + "'");
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw StructuralError("shape " + shape_string(shape) + " has a zero extent");
    n *= e;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <Real T>
Tensor<T> gaussian_noise(const Shape& shape, double scale, const RngStream& stream,
                         std::uint64_t offset) {
  if (!(scale >= 0.0)) throw ParameterError("gaussian_noise: scale must be >= 0");
  Tensor<T> out(shape);
  if (scale == 0.0) return out;
  auto v = out.values();
  std::size_t k = 0;
  // Handle an odd starting offset so the pair loop below stays aligned.
  if (offset % 2 == 1 && k < v.size()) {
    v[k] = static_cast<T>(scale * stream.normal(offset));
    ++k;
  }
  for (; k + 1 < v.size(); k += 2) {
    const auto z = stream.normal_pair((offset + k) / 2);
    v[k] = static_cast<T>(scale * z[0]);
    v[k + 1] = static_cast<T>(scale * z[1]);
  }
  if (k < v.size()) v[k] = static_cast<T>(scale * stream.normal(offset + k));
  return out;
}

namespace {

// Sum of (x * f)^2 in double over eight interleaved lanes, combined in a
// fixed order: vectorizable and still bit-reproducible.
template <Real T>
double sum_squares(std::span<const T> v, T f) {
  constexpr std::size_t kLanes = 8;
  double lane[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= v.size(); i += kLanes) {
    for (std::size_t k = 0; k < kLanes; ++k) {
      const auto y = static_cast<double>(v[i + k] * f);
      lane[k] += y * y;
    }
  }
  double tail = 0.0;
  for (; i < v.size(); ++i) {
    const auto y = static_cast<double>(v[i] * f);
    tail += y * y;
  }
  return (((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]))) +
         tail;
}

}  // namespace

template <Real T>
double global_l2_norm(std::span<const Tensor<T>> tensors) {
  if (tensors.empty()) throw ParameterError("global_l2_norm: empty tensor list");
  double acc = 0.0;
  for (const auto& t : tensors) acc += sum_squares<T>(t.values(), T{1});
  return std::sqrt(acc);
}

template <Real T>
T clip_in_place(std::span<Tensor<T>> tensors, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ParameterError("clip_to_norm: C must be > 0");
  const double norm = global_l2_norm<T>(tensors);
  if (!(norm > clip_norm)) return T{1};
  auto scaled_norm = [&](T f) {
    double acc = 0.0;
    for (const auto& t : tensors) acc += sum_squares<T>(t.values(), f);
    return std::sqrt(acc);
  };
  T factor = static_cast<T>(clip_norm / norm);
  // Rounding can leave the scaled norm a few ulps above C; step the factor
  // down until it does not, so a second clip is the identity.
  for (int attempt = 0; attempt < 16 && scaled_norm(factor) > clip_norm; ++attempt) {
    factor = std::nextafter(factor, T{0});
  }
  for (auto& t : tensors) t *= factor;
  return factor;
}

template Tensor<float> gaussian_noise<float>(const Shape&, double, const RngStream&,
                                             std::uint64_t);
template Tensor<double> gaussian_noise<double>(const Shape&, double, const RngStream&,
                                               std::uint64_t);
template double global_l2_norm<float>(std::span<const Tensor<float>>);
template double global_l2_norm<double>(std::span<const Tensor<double>>);
template float clip_in_place<float>(std::span<Tensor<float>>, double);
template double clip_in_place<double>(std::span<Tensor<double>>, double);

}  // namespace dpbert
