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

#ifndef DPBERT_EXAMPLE_HPP_
#define DPBERT_EXAMPLE_HPP_

#include <cstdint>
#include <vector>

namespace dpbert {

using TokenId = std::int32_t;

// Reserved vocabulary ids; content tokens start at kFirstContentToken.
inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kClsToken = 1;
inline constexpr TokenId kSepToken = 2;
inline constexpr TokenId kMaskToken = 3;
inline constexpr TokenId kFirstContentToken = 4;

// One MLM training example. `labels[i]` is the original token at
// `masked_positions[i]`; positions are ascending and inputs there hold
// kMaskToken.
struct MaskedExample {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> token_types;
  std::vector<std::int32_t> masked_positions;
  std::vector<TokenId> labels;

  bool operator==(const MaskedExample&) const = default;
};

}  // namespace dpbert

#endif  // DPBERT_EXAMPLE_HPP_
