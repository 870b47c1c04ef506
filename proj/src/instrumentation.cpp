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

#include "dpbert/instrumentation.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "dpbert/errors.hpp"

namespace dpbert {

namespace {

using nlohmann::json;

template <Real T>
double squared_norm(const Tensor<T>& t) {
  double s = 0.0;
  for (T v : t.values()) s += static_cast<double>(v) * static_cast<double>(v);
  return s;
}

template <Real T>
double group_dot(const ParameterSet<T>& a, const ParameterSet<T>& b,
                 const std::vector<std::size_t>& idx) {
  double s = 0.0;
  for (auto i : idx) {
    auto x = a.at(i).values();
    auto y = b.at(i).values();
    for (std::size_t k = 0; k < x.size(); ++k) {
      s += static_cast<double>(x[k]) * static_cast<double>(y[k]);
    }
  }
  return s;
}

template <Real T>
GradientSet<T> summed_gradient(const ModelConfig& config, const ParameterSet<T>& params,
                               std::span<const MaskedExample> probe) {
  GradientSet<T> total = params.zeros_like();
  for (const auto& ex : probe) total += per_example_gradient(config, params, ex);
  return total;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

// Complete lines of `path` and the byte length they cover.
std::pair<std::vector<std::string>, std::uintmax_t> complete_lines(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open metrics log " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  std::vector<std::string> lines;
  std::size_t start = 0;
  std::uintmax_t covered = 0;
  while (true) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) break;
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
    covered = start;
  }
  return {std::move(lines), covered};
}

}  // namespace

std::optional<double> gradient_snr(double signal_norm, double noise_norm) {
  if (!(signal_norm >= 0.0) || !(noise_norm >= 0.0) || !std::isfinite(signal_norm) ||
      !std::isfinite(noise_norm)) {
    throw ParameterError("gradient_snr: norms must be finite and >= 0");
  }
  if (noise_norm == 0.0) return std::nullopt;
  return signal_norm / noise_norm;
}

template <Real T>
std::map<std::string, double> weight_norm_report(const ParameterSet<T>& params) {
  std::map<std::string, double> out;
  double conjoint = 0.0;
  const auto embeddings = embedding_group();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double sq = squared_norm(params.at(i));
    out[params.names()[i]] = std::sqrt(sq);
    for (const auto& e : embeddings) {
      if (params.names()[i] == e) conjoint += sq;
    }
  }
  out[std::string(kConjointEmbedding)] = std::sqrt(conjoint);
  return out;
}

std::vector<std::string> resolve_group(const ModelConfig& config, std::string_view selector) {
  if (selector == kConjointEmbedding) return embedding_group();
  for (const auto& [name, shape] : parameter_shapes(config)) {
    if (name == selector) return {name};
  }
  throw ParameterError("unknown parameter group '" + std::string(selector) + "'");
}

template <Real T>
ScaleProbeResult scale_invariance_probe(const ModelConfig& config, const ParameterSet<T>& params,
                                        std::string_view selector, double alpha,
                                        std::span<const MaskedExample> probe) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw ParameterError("scale_invariance_probe: alpha must be finite and > 0");
  }
  if (probe.empty()) throw ParameterError("scale_invariance_probe: empty probe batch");
  ModelConfig cfg = config;
  cfg.ln_xi = 0.0;
  std::vector<std::size_t> idx;
  for (const auto& name : resolve_group(cfg, selector)) idx.push_back(params.index_of(name));

  ParameterSet<T> scaled = params;
  for (auto i : idx) scaled.at(i) *= static_cast<T>(alpha);

  ScaleProbeResult r;
  for (const auto& ex : probe) {
    const auto base = masked_logits(cfg, params, ex);
    const auto moved = masked_logits(cfg, scaled, ex);
    const double dev = static_cast<double>((base - moved).cwiseAbs().maxCoeff());
    r.max_logit_deviation = std::max(r.max_logit_deviation, dev);
  }
  const GradientSet<T> g0 = summed_gradient(cfg, params, probe);
  const GradientSet<T> g1 = summed_gradient(cfg, scaled, probe);
  const double n0 = std::sqrt(group_dot(g0, g0, idx));
  const double n1 = std::sqrt(group_dot(g1, g1, idx));
  if (n0 == 0.0) throw NumericError("gradient", "scale_invariance_probe: zero gradient on group");
  r.gradient_norm_ratio = n1 / n0;
  const double w = std::sqrt(group_dot(params, params, idx));
  r.gradient_weight_cosine = w == 0.0 ? 0.0 : group_dot(g0, params, idx) / (n0 * w);
  return r;
}

std::string format_metrics_row(const MetricsRow& row) {
  // ordered_json keeps the documented field order in the file.
  nlohmann::ordered_json j;
  j["step"] = row.step;
  j["examples_seen"] = row.examples_seen;
  j["loss"] = row.loss;
  j["mlm_acc"] = optional_json(row.mlm_acc);
  j["lr"] = row.lr;
  j["batch_size"] = row.batch_size;
  // Infinity (no privacy guarantee) is written as null.
  j["eps_spent"] = std::isfinite(row.eps_spent) ? json(row.eps_spent) : json(nullptr);
  j["grad_snr"] = optional_json(row.grad_snr);
  for (const auto& [group, norm] : row.wnorm) j["wnorm." + group] = norm;
  j["signal_norm_sum"] = row.signal_norm_sum;
  j["noise_norm_sum"] = row.noise_norm_sum;
  j["signal_norm_mean"] = row.signal_norm_mean;
  j["noise_norm_mean"] = row.noise_norm_mean;
  return j.dump();
}

MetricsRow parse_metrics_row(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("metrics row does not parse: ") + e.what());
  }
  if (!j.is_object()) throw DataError("metrics row is not an object");
  MetricsRow row;
  try {
    row.step = j.at("step").get<std::uint64_t>();
    row.examples_seen = j.at("examples_seen").get<std::uint64_t>();
    row.loss = j.at("loss").get<double>();
    row.mlm_acc = optional_from(j.at("mlm_acc"));
    row.lr = j.at("lr").get<double>();
    row.batch_size = j.at("batch_size").get<std::uint64_t>();
    const auto& eps = j.at("eps_spent");
    row.eps_spent = eps.is_null() ? std::numeric_limits<double>::infinity() : eps.get<double>();
    row.grad_snr = optional_from(j.at("grad_snr"));
    row.signal_norm_sum = j.at("signal_norm_sum").get<double>();
    row.noise_norm_sum = j.at("noise_norm_sum").get<double>();
    row.signal_norm_mean = j.at("signal_norm_mean").get<double>();
    row.noise_norm_mean = j.at("noise_norm_mean").get<double>();
    for (const auto& [key, value] : j.items()) {
      if (key.starts_with("wnorm.")) row.wnorm[key.substr(6)] = value.get<double>();
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("metrics row: ") + e.what());
  }
  return row;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::vector<MetricsRow> rows;
  for (const auto& line : complete_lines(path).first) {
    if (!line.empty()) rows.push_back(parse_metrics_row(line));
  }
  return rows;
}

std::vector<MetricsRow> recover_metrics(const std::filesystem::path& path,
                                        std::uint64_t keep_through) {
  const auto lines = complete_lines(path).first;
  std::vector<MetricsRow> rows;
  std::uintmax_t keep_bytes = 0;
  for (const auto& line : lines) {
    if (line.empty()) {
      keep_bytes += 1;
      continue;
    }
    MetricsRow row = parse_metrics_row(line);
    if (row.step > keep_through) break;
    rows.push_back(std::move(row));
    keep_bytes += line.size() + 1;
  }
  if (keep_bytes != std::filesystem::file_size(path)) {
    std::filesystem::resize_file(path, keep_bytes);
  }
  return rows;
}

MetricsSink::MetricsSink(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(path_)) {
    const auto rows = recover_metrics(path_);
    if (!rows.empty()) last_step_ = rows.back().step;
  }
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw DataError("cannot open metrics log " + path_.string() + ": " + std::strerror(errno));
  }
}

MetricsSink::~MetricsSink() {
  if (fd_ >= 0) ::close(fd_);
}

void MetricsSink::append(const MetricsRow& row) {
  if (last_step_ && row.step <= *last_step_) {
    throw ContractError("metrics step " + std::to_string(row.step) +
                        " does not follow last logged step " + std::to_string(*last_step_));
  }
  const std::string line = format_metrics_row(row) + "\n";
  std::size_t done = 0;
  while (done < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw DataError("metrics write failed: " + std::string(std::strerror(errno)));
    }
    done += static_cast<std::size_t>(n);
  }
  last_step_ = row.step;
}

namespace {

double best_accuracy(std::span<const MetricsRow> rows, const char* which) {
  std::optional<double> best;
  for (const auto& r : rows) {
    if (r.mlm_acc && (!best || *r.mlm_acc > *best)) best = r.mlm_acc;
  }
  if (!best) throw ParameterError(std::string("efficiency_report: ") + which + " log has no mlm_acc rows");
  return *best;
}

std::optional<std::uint64_t> examples_at(std::span<const MetricsRow> rows, double target) {
  for (const auto& r : rows) {
    if (r.mlm_acc && *r.mlm_acc >= target) return r.examples_seen;
  }
  return std::nullopt;
}

}  // namespace

EfficiencyReport efficiency_report(std::span<const MetricsRow> baseline,
                                   std::span<const MetricsRow> candidate,
                                   std::optional<double> target, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ParameterError("efficiency_report: fraction must be in (0, 1]");
  }
  const double a = best_accuracy(baseline, "baseline");
  const double b = best_accuracy(candidate, "candidate");
  EfficiencyReport r;
  r.target = target ? *target : fraction * std::min(a, b);
  r.baseline_examples = examples_at(baseline, r.target);
  r.candidate_examples = examples_at(candidate, r.target);
  if (r.baseline_examples && r.candidate_examples && *r.baseline_examples > 0) {
    r.reduction_percent = 100.0 * (1.0 - static_cast<double>(*r.candidate_examples) /
                                             static_cast<double>(*r.baseline_examples));
  }
  return r;
}

template std::map<std::string, double> weight_norm_report(const ParameterSet<float>&);
template std::map<std::string, double> weight_norm_report(const ParameterSet<double>&);
template ScaleProbeResult scale_invariance_probe(const ModelConfig&, const ParameterSet<float>&,
                                                 std::string_view, double,
                                                 std::span<const MaskedExample>);
template ScaleProbeResult scale_invariance_probe(const ModelConfig&, const ParameterSet<double>&,
                                                 std::string_view, double,
                                                 std::span<const MaskedExample>);

}  // namespace dpbert
