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

// Checkpoint file layout:
//
//   bytes 0..7    magic "DPBCKPT1"
//   bytes 8..15   manifest length m, little-endian u64
//   next m bytes  JSON manifest
//   rest          payload: little-endian IEEE-754 values, tensors back to
//                 back in manifest order
//
// The manifest holds the format version, precision, step, RNG position,
// schedule position, privacy spent, and for each tensor its name, shape,
// byte offset and byte length. Offsets must tile the payload exactly.

#ifndef DPBERT_CHECKPOINT_HPP_
#define DPBERT_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <string>

#include "dpbert/dp_optimizer.hpp"
#include "dpbert/model.hpp"

namespace dpbert {

inline constexpr int kCheckpointVersion = 1;

template <Real T>
struct TrainingState {
  ParameterSet<T> params;
  OptimizerState<T> optimizer;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;  // last completed step; the next draws use step + 1
  std::uint64_t examples_seen = 0;
  double eps_spent = 0.0;
  // Digest of the resolved config the state belongs to; resume refuses a
  // mismatch.
  std::string config_digest;

  bool operator==(const TrainingState&) const = default;
};

// Writes to a temporary sibling and renames it over `path`.
template <Real T>
void save_checkpoint(const std::filesystem::path& path, const TrainingState<T>& state);

// LoadError naming the defect: bad magic, version or precision mismatch,
// malformed manifest, overlapping or gapped offsets, truncated payload.
template <Real T>
TrainingState<T> load_checkpoint(const std::filesystem::path& path);

// Precision recorded in a checkpoint's manifest.
Precision checkpoint_precision(const std::filesystem::path& path);

}  // namespace dpbert

#endif  // DPBERT_CHECKPOINT_HPP_
