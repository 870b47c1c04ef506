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

// Measurements taken during training: gradient-SNR, Frobenius norms per
// parameter group, the layer-norm scale-invariance probe, and the
// line-delimited metrics log.

#ifndef DPBERT_INSTRUMENTATION_HPP_
#define DPBERT_INSTRUMENTATION_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpbert/example.hpp"
#include "dpbert/model.hpp"

namespace dpbert {

// signal / noise, or nullopt when noise is 0. ParameterError on negative
// or non-finite input.
std::optional<double> gradient_snr(double signal_norm, double noise_norm);

// Key of the combined word + position + token-type embedding entry.
inline constexpr std::string_view kConjointEmbedding = "embeddings.conjoint";

// Frobenius norm of every tensor, keyed by name, plus kConjointEmbedding.
template <Real T>
std::map<std::string, double> weight_norm_report(const ParameterSet<T>& params);

// Tensor names selected by `selector`: kConjointEmbedding expands to the
// three embedding tables, anything else must name one tensor.
// ParameterError for unknown names.
std::vector<std::string> resolve_group(const ModelConfig& config, std::string_view selector);

struct ScaleProbeResult {
  double max_logit_deviation = 0.0;
  // ||grad at alpha W|| / ||grad at W||, restricted to the group.
  double gradient_norm_ratio = 0.0;
  // cos(grad, W) over the group at the unscaled point.
  double gradient_weight_cosine = 0.0;
};

// Rescales the selected group by alpha with the layer-norm epsilon forced
// to 0 and compares masked logits and summed gradients over `probe`.
template <Real T>
ScaleProbeResult scale_invariance_probe(const ModelConfig& config, const ParameterSet<T>& params,
                                        std::string_view selector, double alpha,
                                        std::span<const MaskedExample> probe);

struct MetricsRow {
  std::uint64_t step = 0;
  std::uint64_t examples_seen = 0;
  double loss = 0.0;
  std::optional<double> mlm_acc;
  double lr = 0.0;
  std::uint64_t batch_size = 0;
  double eps_spent = 0.0;
  std::optional<double> grad_snr;
  std::map<std::string, double> wnorm;
  // Raw norms behind grad_snr, summed and divided by the step denominator.
  double signal_norm_sum = 0.0;
  double noise_norm_sum = 0.0;
  double signal_norm_mean = 0.0;
  double noise_norm_mean = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

// One JSON object, no trailing newline.
std::string format_metrics_row(const MetricsRow& row);
// DataError when the line is not a complete row.
MetricsRow parse_metrics_row(std::string_view line);

// Rows of every complete line; a trailing fragment without its newline is
// ignored. DataError if a complete line fails to parse.
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

// Cuts the file after its last complete line and drops rows with
// step > keep_through. Returns the surviving rows.
std::vector<MetricsRow> recover_metrics(const std::filesystem::path& path,
                                        std::uint64_t keep_through = UINT64_MAX);

// Append-only writer. Each row goes out as one write() of a full line, so
// a crash leaves at most one trailing fragment, which the readers ignore.
class MetricsSink {
 public:
  // Opens for append. Existing content is recovered first and the step
  // check continues from its last row.
  explicit MetricsSink(std::filesystem::path path);
  ~MetricsSink();
  MetricsSink(const MetricsSink&) = delete;
  MetricsSink& operator=(const MetricsSink&) = delete;

  // ContractError unless row.step exceeds the last logged step.
  void append(const MetricsRow& row);
  std::optional<std::uint64_t> last_step() const { return last_step_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::optional<std::uint64_t> last_step_;
};

// Examples seen when each of two runs first reaches a shared MLM accuracy.
struct EfficiencyReport {
  double target = 0.0;
  std::optional<std::uint64_t> baseline_examples;   // nullopt: never reached
  std::optional<std::uint64_t> candidate_examples;
  // 100 * (1 - candidate / baseline) when both reached the target.
  std::optional<double> reduction_percent;
};

// Without an explicit target, uses fraction * min(best accuracy of each
// log). ParameterError when a log has no evaluated rows.
EfficiencyReport efficiency_report(std::span<const MetricsRow> baseline,
                                   std::span<const MetricsRow> candidate,
                                   std::optional<double> target = std::nullopt,
                                   double fraction = 0.9);

}  // namespace dpbert

#endif  // DPBERT_INSTRUMENTATION_HPP_
