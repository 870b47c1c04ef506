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

// Run configuration: a flat "section.key = value" document. '#' starts a
// comment. Unknown or repeated keys are rejected, as is the first
// inconsistent value, always naming the key.

#ifndef DPBERT_CONFIG_HPP_
#define DPBERT_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dpbert/accountant.hpp"
#include "dpbert/data.hpp"
#include "dpbert/dp_optimizer.hpp"
#include "dpbert/model.hpp"
#include "dpbert/schedules.hpp"

namespace dpbert {

struct RunConfig {
  std::uint64_t seed = 0;
  std::uint64_t eval_every = 50;
  std::uint64_t eval_examples = 10000;
  std::uint64_t checkpoint_every = 500;
  std::string output_dir = "runs/default";

  ModelConfig model;
  DpAdamConfig dp;
  // When set, dp.noise_multiplier is replaced by the value calibrated to
  // reach this epsilon over the full schedule.
  std::optional<double> target_epsilon;
  double delta = 0.0;  // 0 means 1/n
  SamplingMode sampling = SamplingMode::kPoisson;

  BatchSchedule batch;
  LrSchedule lr;

  std::uint64_t data_examples = 1024;
  std::uint64_t data_seed = 0;
  double data_concentration = 0.9;
  std::size_t data_branching = 4;
  double data_zipf_exponent = 1.0;
  double mask_rate = 0.15;

  // ConfigError naming the first offending key.
  void validate() const;

  SyntheticCorpusSpec corpus_spec() const;
  AccountingParams accounting_params() const;
  double resolved_delta() const;
};

// Parses on top of `base` (defaults unless given). Throws ConfigError with
// `origin` and the line number in the message.
RunConfig parse_config(std::string_view text, std::string_view origin = "<config>",
                       const RunConfig& base = {});
RunConfig load_config(const std::filesystem::path& path);

// Every key, canonical order, values that parse back to the same config.
std::string format_config(const RunConfig& config);

// Known key names in canonical order.
std::vector<std::string> config_keys();

// Shipped presets. `paper_preset` carries the full-scale constants and is
// only meant for accounting (dry-run); `desk_preset` divides the batch
// size by 1024, runs 2000 steps of DP training of a small model on the
// synthetic corpus and calibrates sigma to the same epsilon.
RunConfig paper_preset();
RunConfig desk_preset();
// `c` with sigma 0, clip norm 1e6 and no weight decay.
RunConfig desk_nonprivate(RunConfig c);
// Short DP runs comparing the 1/1024-scaled increasing schedule
// (256 -> 1024 in four stages) with a fixed batch of 1024.
RunConfig desk_efficiency(bool increasing);
// Preset by name: paper_preset, desk_preset, desk_nonprivate (of
// desk_preset), desk_fixed, desk_increasing. Otherwise nullopt.
std::optional<RunConfig> preset_by_name(std::string_view name);
std::vector<std::string> preset_names();

// Resolves target_epsilon into dp.noise_multiplier (no-op when unset).
// CalibrationError if the target is unreachable.
RunConfig resolve_noise(RunConfig config);

}  // namespace dpbert

#endif  // DPBERT_CONFIG_HPP_
