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

#include "dpbert/rng.hpp"

#include <cmath>
#include <numbers>

#include "dpbert/errors.hpp"

namespace dpbert {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// 53-bit uniform strictly inside (0, 1).
inline double to_open_unit(std::uint32_t a, std::uint32_t b) {
  const std::uint64_t bits =
      (static_cast<std::uint64_t>(a >> 5) << 26) | (b >> 6);
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

constexpr std::uint64_t kLabelLimit = 1ull << 32;

}  // namespace

PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t step,
                     std::uint64_t example, Purpose purpose)
    : seed_(seed),
      step_(step),
      example_(example),
      purpose_(purpose),
      key_{static_cast<std::uint32_t>(seed),
           static_cast<std::uint32_t>(seed >> 32)} {
  if (step >= kLabelLimit || example >= kLabelLimit) {
    throw ParameterError("RngStream: step and example labels must fit in 32 bits");
  }
}

std::array<std::uint32_t, 4> RngStream::block(std::uint64_t index) const {
  // Counter words: draw index (low), example, step, purpose in the top byte
  // with the draw index high bits below it.
  const PhiloxCounter ctr = {
      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(example_),
      static_cast<std::uint32_t>(step_),
      (static_cast<std::uint32_t>(purpose_) << 24) |
          static_cast<std::uint32_t>((index >> 32) & 0x00FFFFFFu)};
  return philox4x32_10(ctr, key_);
}

double RngStream::uniform(std::uint64_t index) const {
  const auto b = block(index / 2);
  return (index % 2 == 0) ? to_open_unit(b[0], b[1]) : to_open_unit(b[2], b[3]);
}

std::array<double, 2> RngStream::normal_pair(std::uint64_t pair) const {
  const auto b = block(pair);
  const double u1 = to_open_unit(b[0], b[1]);
  const double u2 = to_open_unit(b[2], b[3]);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(theta), r * std::sin(theta)};
}

double RngStream::normal(std::uint64_t index) const {
  return normal_pair(index / 2)[index % 2];
}

std::uint64_t RngStream::below(std::uint64_t index, std::uint64_t bound) const {
  if (bound == 0) throw ParameterError("RngStream::below: bound must be positive");
  const auto v = static_cast<std::uint64_t>(uniform(index) * static_cast<double>(bound));
  return v < bound ? v : bound - 1;
}

}  // namespace dpbert
