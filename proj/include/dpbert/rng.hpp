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

#ifndef DPBERT_RNG_HPP_
#define DPBERT_RNG_HPP_

#include <array>
#include <cstdint>

namespace dpbert {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). A block of
// four 32-bit words is a pure function of (counter, key).
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key);

// What a stream is used for. Distinct purposes never share draws.
enum class Purpose : std::uint32_t {
  kInit = 1,
  kNoise = 2,
  kSample = 3,
  kCorpusTable = 4,
  kCorpus = 5,
  kMask = 6,
  kTest = 7,
  kToyData = 8,
};

// A keyed random stream. Draw i is a pure function of
// (seed, step, example, purpose, i); evaluation order and thread count can
// never change a value.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t step, std::uint64_t example,
            Purpose purpose);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t step() const { return step_; }
  std::uint64_t example() const { return example_; }
  Purpose purpose() const { return purpose_; }

  // Same labels with a different example index.
  RngStream with_example(std::uint64_t example) const {
    return RngStream(seed_, step_, example, purpose_);
  }

  std::array<std::uint32_t, 4> block(std::uint64_t index) const;

  // Uniform on the open interval (0, 1), 53 bits. Two per block.
  double uniform(std::uint64_t index) const;
  // Standard normal via Box-Muller. Two per block.
  double normal(std::uint64_t index) const;
  // normal(2 * pair) and normal(2 * pair + 1) from one block.
  std::array<double, 2> normal_pair(std::uint64_t pair) const;
  // Uniform integer in [0, bound); bound > 0. Uses one uniform draw.
  std::uint64_t below(std::uint64_t index, std::uint64_t bound) const;

 private:
  std::uint64_t seed_;
  std::uint64_t step_;
  std::uint64_t example_;
  Purpose purpose_;
  PhiloxKey key_;
};

// Sequential reader over a stream. Cheap to copy; never shares state.
class RngCursor {
 public:
  explicit RngCursor(RngStream stream, std::uint64_t start = 0)
      : stream_(stream), next_(start) {}
  double uniform() { return stream_.uniform(next_++); }
  double normal() { return stream_.normal(next_++); }
  std::uint64_t below(std::uint64_t bound) {
    return stream_.below(next_++, bound);
  }
  std::uint64_t position() const { return next_; }

 private:
  RngStream stream_;
  std::uint64_t next_;
};

}  // namespace dpbert

#endif  // DPBERT_RNG_HPP_
