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

// The DP training loop. A run directory holds:
//
//   config.resolved   the config actually run (noise multiplier resolved)
//   metrics.jsonl     one MetricsRow per step
//   report.jsonl      one record per run or resume segment
//   checkpoints/      step_<t>.ckpt
//
// Results do not depend on the worker count: a batch is cut into fixed
// shards of kShardSize examples and the shard sums are merged in a fixed
// tree order.

#ifndef DPBERT_TRAINER_HPP_
#define DPBERT_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dpbert/accountant.hpp"
#include "dpbert/config.hpp"

namespace dpbert {

inline constexpr std::size_t kShardSize = 32;

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: config.output_dir
  bool resume = false;            // continue from the newest checkpoint in out_dir
  std::optional<std::uint64_t> max_steps;  // stop (with a checkpoint) after this step
  unsigned threads = 0;                    // 0: hardware concurrency
  std::ostream* progress = nullptr;        // one line per evaluation when set
};

struct TrainReport {
  std::string status;  // "completed", "stopped" (max_steps) or "aborted"
  std::uint64_t final_step = 0;
  std::uint64_t examples_seen = 0;
  std::optional<double> final_accuracy;
  double eps_spent = 0.0;           // accountant over the steps actually run
  double eps_full_schedule = 0.0;   // accountant over the whole schedule
  double delta = 0.0;
  double noise_multiplier = 0.0;
  std::filesystem::path out_dir;
  std::filesystem::path metrics_path;
  std::filesystem::path report_path;
  std::vector<std::filesystem::path> checkpoints;
};

// Dry run: the accounting report for `config` without corpus generation or
// training. Writes config.resolved and report.jsonl when out_dir is set.
TrainReport dry_run(const RunConfig& config, const std::filesystem::path& out_dir);

// ConfigError leaves no files behind. On a non-finite loss the run stops,
// records an "aborted" report line, keeps its earlier checkpoints and
// rethrows the NumericError.
TrainReport run_training(const RunConfig& config, const TrainOptions& options = {});

// FNV-1a of the resolved config text, hex.
std::string config_digest(const RunConfig& resolved);

// Newest step_<t>.ckpt under dir/checkpoints, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

}  // namespace dpbert

#endif  // DPBERT_TRAINER_HPP_
