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

#include "dpbert/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "dpbert/checkpoint.hpp"
#include "dpbert/data.hpp"
#include "dpbert/dp_optimizer.hpp"
#include "dpbert/errors.hpp"
#include "dpbert/instrumentation.hpp"
#include "dpbert/model.hpp"
#include "dpbert/schedules.hpp"

namespace dpbert {

namespace fs = std::filesystem;

namespace {

using nlohmann::ordered_json;

constexpr double kInfinity = std::numeric_limits<double>::infinity();

ordered_json eps_json(double eps) { return std::isfinite(eps) ? ordered_json(eps) : ordered_json(nullptr); }

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to " + path.string());
  out << line << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path checkpoint_path(const fs::path& dir, std::uint64_t step) {
  char name[40];
  std::snprintf(name, sizeof name, "step_%08llu.ckpt", static_cast<unsigned long long>(step));
  return dir / "checkpoints" / name;
}

ordered_json report_json(const TrainReport& r, const RunConfig& cfg) {
  ordered_json j;
  j["kind"] = "train";
  j["status"] = r.status;
  j["final_step"] = r.final_step;
  j["total_steps"] = cfg.batch.total_steps;
  j["examples_seen"] = r.examples_seen;
  j["final_mlm_acc"] = r.final_accuracy ? ordered_json(*r.final_accuracy) : ordered_json(nullptr);
  j["eps_spent"] = eps_json(r.eps_spent);
  j["eps_full_schedule"] = eps_json(r.eps_full_schedule);
  j["delta"] = r.delta;
  j["noise_multiplier"] = r.noise_multiplier;
  j["sampling"] = std::string(sampling_mode_name(cfg.sampling));
  j["metrics"] = r.metrics_path.string();
  ordered_json ck = ordered_json::array();
  for (const auto& p : r.checkpoints) ck.push_back(p.string());
  j["checkpoints"] = ck;
  return j;
}

double full_schedule_epsilon(const RunConfig& cfg) {
  if (cfg.dp.noise_multiplier == 0.0) return kInfinity;
  return account(cfg.accounting_params()).epsilon;
}

// Shard results live in one slot per shard so the merge order never
// depends on which worker finished first.
template <Real T>
struct ShardResult {
  std::optional<ClippedAccumulator<T>> acc;
  double loss_sum = 0.0;
  std::exception_ptr error;
};

template <Real T>
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const TrainOptions& opt, fs::path dir)
      : cfg_(cfg), opt_(opt), dir_(std::move(dir)) {}

  TrainReport run();

 private:
  void build_data();
  void step_once(std::uint64_t t);
  void evaluate_into(MetricsRow& row);
  void save(std::uint64_t step);
  void run_shards(const std::vector<std::uint64_t>& batch,
                  std::vector<ShardResult<T>>& results);

  RunConfig cfg_;
  TrainOptions opt_;
  fs::path dir_;
  unsigned workers_ = 1;

  std::vector<MaskedExample> train_;
  std::vector<MaskedExample> eval_;
  TrainingState<T> state_;
  std::optional<RunningAccountant> accountant_;
  std::optional<MetricsSink> sink_;
  std::vector<MlmEngine<T>> engines_;
  std::vector<GradientSet<T>> scratch_;
  std::optional<double> last_accuracy_;
  TrainReport report_;
};

template <Real T>
void Trainer<T>::build_data() {
  const auto spec = cfg_.corpus_spec();
  train_ = mask_corpus(generate_corpus(spec), cfg_.mask_rate, cfg_.data_seed);
  eval_ = mask_corpus(generate_sequences(spec, spec.examples, cfg_.eval_examples), cfg_.mask_rate,
                      cfg_.data_seed, spec.examples);
}

template <Real T>
void Trainer<T>::run_shards(const std::vector<std::uint64_t>& batch,
                            std::vector<ShardResult<T>>& results) {
  const std::size_t shards = (batch.size() + kShardSize - 1) / kShardSize;
  results.assign(shards, {});
  std::atomic<std::size_t> next{0};
  auto work = [&](unsigned w) {
    auto& engine = engines_[w];
    auto& grads = scratch_[w];
    for (std::size_t s = next++; s < shards; s = next++) {
      auto& out = results[s];
      try {
        ClippedAccumulator<T> acc(state_.params);
        const std::size_t end = std::min(batch.size(), (s + 1) * kShardSize);
        for (std::size_t i = s * kShardSize; i < end; ++i) {
          const auto& ex = train_[batch[i]];
          const LossResult r = engine.forward(state_.params, ex);
          if (!std::isfinite(r.loss)) {
            throw NumericError("loss", "non-finite loss on example " + std::to_string(batch[i]));
          }
          engine.backward(state_.params, ex, grads);
          require_finite(grads, "per-example gradient");
          acc.absorb(grads, cfg_.dp.clip_norm);
          out.loss_sum += r.loss;
        }
        out.acc.emplace(std::move(acc));
      } catch (...) {
        out.error = std::current_exception();
      }
    }
  };
  const unsigned n = std::min<unsigned>(workers_, static_cast<unsigned>(std::max<std::size_t>(shards, 1)));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < n; ++w) pool.emplace_back(work, w);
  work(0);
  for (auto& th : pool) th.join();
  for (auto& r : results) {
    if (r.error) std::rethrow_exception(r.error);
  }
}

template <Real T>
void Trainer<T>::step_once(std::uint64_t t) {
  const std::uint64_t n = cfg_.data_examples;
  const std::uint64_t b_t = batch_size_at(cfg_.batch, t);
  const double lr = lr_at(cfg_.lr, t);
  const auto batch = sample_batch(n, b_t, cfg_.sampling, RngStream(cfg_.seed, t, 0, Purpose::kSample));

  std::vector<ShardResult<T>> results;
  run_shards(batch, results);
  double loss_sum = 0.0;
  std::vector<ClippedAccumulator<T>> accs;
  for (auto& r : results) {
    loss_sum += r.loss_sum;
    accs.push_back(std::move(*r.acc));
  }
  const ClippedAccumulator<T> merged =
      accs.empty() ? ClippedAccumulator<T>(state_.params) : tree_merge(std::move(accs));

  const RngStream noise(cfg_.seed, t, 0, Purpose::kNoise);
  // An empty Poisson batch still takes a noise-only step, normalized by the
  // expected batch size.
  const double denominator =
      merged.count() > 0 ? static_cast<double>(merged.count()) : static_cast<double>(b_t);
  Privatized<T> priv = privatize_with_denominator(merged, denominator, cfg_.dp.clip_norm,
                                                  cfg_.dp.noise_multiplier, noise);
  adam_step(state_.optimizer, priv.gradient, state_.params, cfg_.dp, lr);
  require_finite(state_.params, "parameters after step " + std::to_string(t));

  state_.step = t;
  state_.examples_seen += batch.size();
  if (accountant_) {
    accountant_->record_steps(static_cast<double>(b_t) / static_cast<double>(n), 1);
    state_.eps_spent = accountant_->epsilon();
  } else {
    state_.eps_spent = kInfinity;
  }

  MetricsRow row;
  row.step = t;
  row.examples_seen = state_.examples_seen;
  row.loss = batch.empty() ? 0.0 : loss_sum / static_cast<double>(batch.size());
  row.lr = lr;
  row.batch_size = batch.size();
  row.eps_spent = state_.eps_spent;
  row.grad_snr = priv.snr.ratio;
  row.signal_norm_sum = priv.snr.signal_norm;
  row.noise_norm_sum = priv.snr.noise_norm;
  row.signal_norm_mean = priv.snr.signal_norm / denominator;
  row.noise_norm_mean = priv.snr.noise_norm / denominator;
  row.wnorm = weight_norm_report(state_.params);
  if (t % cfg_.eval_every == 0 || t == cfg_.batch.total_steps) evaluate_into(row);
  sink_->append(row);
}

template <Real T>
void Trainer<T>::evaluate_into(MetricsRow& row) {
  // Shards of the eval slice, summed in shard order.
  const std::size_t shards = (eval_.size() + kShardSize - 1) / kShardSize;
  std::vector<std::pair<std::int64_t, std::int64_t>> counts(shards, {0, 0});
  std::atomic<std::size_t> next{0};
  auto work = [&](unsigned w) {
    auto& engine = engines_[w];
    for (std::size_t s = next++; s < shards; s = next++) {
      const std::size_t end = std::min(eval_.size(), (s + 1) * kShardSize);
      for (std::size_t i = s * kShardSize; i < end; ++i) {
        const LossResult r = engine.forward(state_.params, eval_[i]);
        counts[s].first += r.correct;
        counts[s].second += r.total_masked;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers_; ++w) pool.emplace_back(work, w);
  work(0);
  for (auto& th : pool) th.join();
  std::int64_t correct = 0, total = 0;
  for (const auto& [c, m] : counts) {
    correct += c;
    total += m;
  }
  row.mlm_acc = static_cast<double>(correct) / static_cast<double>(total);
  last_accuracy_ = row.mlm_acc;
  if (opt_.progress) {
    *opt_.progress << "step " << row.step << "/" << cfg_.batch.total_steps << "  loss " << row.loss
                   << "  mlm_acc " << *row.mlm_acc << "  eps " << row.eps_spent << std::endl;
  }
}

template <Real T>
void Trainer<T>::save(std::uint64_t step) {
  const fs::path p = checkpoint_path(dir_, step);
  save_checkpoint(p, state_);
  if (report_.checkpoints.empty() || report_.checkpoints.back() != p) report_.checkpoints.push_back(p);
}

template <Real T>
TrainReport Trainer<T>::run() {
  workers_ = opt_.threads ? opt_.threads : std::max(1u, std::thread::hardware_concurrency());
  const std::string digest = config_digest(cfg_);
  const fs::path metrics = dir_ / "metrics.jsonl";
  report_.out_dir = dir_;
  report_.metrics_path = metrics;
  report_.report_path = dir_ / "report.jsonl";
  report_.delta = cfg_.resolved_delta();
  report_.noise_multiplier = cfg_.dp.noise_multiplier;
  report_.eps_full_schedule = full_schedule_epsilon(cfg_);

  if (cfg_.dp.noise_multiplier > 0.0) accountant_.emplace(cfg_.dp.noise_multiplier, cfg_.resolved_delta());

  if (opt_.resume) {
    const auto ck = latest_checkpoint(dir_);
    if (!ck) throw ConfigError("", "--resume: no checkpoint under " + (dir_ / "checkpoints").string());
    state_ = load_checkpoint<T>(*ck);
    if (state_.config_digest != digest) {
      throw ConfigError("", "--resume: " + ck->string() + " belongs to a different config");
    }
    for (const auto& entry : fs::directory_iterator(dir_ / "checkpoints")) {
      if (entry.path().extension() == ".ckpt") report_.checkpoints.push_back(entry.path());
    }
    std::sort(report_.checkpoints.begin(), report_.checkpoints.end());
    for (std::uint64_t t = 1; t <= state_.step && accountant_; ++t) {
      accountant_->record_steps(
          static_cast<double>(batch_size_at(cfg_.batch, t)) / static_cast<double>(cfg_.data_examples), 1);
    }
    if (fs::exists(metrics)) recover_metrics(metrics, state_.step);
  } else {
    fs::create_directories(dir_ / "checkpoints");
    write_text(dir_ / "config.resolved", format_config(cfg_));
    if (fs::exists(metrics)) fs::remove(metrics);
    state_.params = init_parameters<T>(cfg_.model, RngStream(cfg_.seed, 0, 0, Purpose::kInit));
    state_.optimizer = OptimizerState<T>::zeros_like(state_.params);
    state_.seed = cfg_.seed;
    state_.config_digest = digest;
    state_.eps_spent = 0.0;
  }
  sink_.emplace(metrics);
  build_data();
  for (unsigned w = 0; w < workers_; ++w) {
    engines_.emplace_back(cfg_.model);
    scratch_.push_back(state_.params.zeros_like());
  }

  const std::uint64_t last =
      opt_.max_steps ? std::min(*opt_.max_steps, cfg_.batch.total_steps) : cfg_.batch.total_steps;
  try {
    for (std::uint64_t t = state_.step + 1; t <= last; ++t) {
      step_once(t);
      if (t % cfg_.checkpoint_every == 0 || t == last) save(t);
    }
  } catch (const NumericError&) {
    report_.status = "aborted";
    report_.final_step = state_.step;
    report_.examples_seen = state_.examples_seen;
    report_.eps_spent = accountant_ ? accountant_->epsilon() : kInfinity;
    append_line(report_.report_path, report_json(report_, cfg_).dump());
    throw;
  }
  if (report_.checkpoints.empty()) save(state_.step);
  report_.status = state_.step == cfg_.batch.total_steps ? "completed" : "stopped";
  report_.final_step = state_.step;
  report_.examples_seen = state_.examples_seen;
  report_.final_accuracy = last_accuracy_;
  report_.eps_spent = state_.eps_spent;
  append_line(report_.report_path, report_json(report_, cfg_).dump());
  return report_;
}

}  // namespace

std::string config_digest(const RunConfig& resolved) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : format_config(resolved)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
  const fs::path dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<fs::path> best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto& p = entry.path();
    if (p.extension() != ".ckpt" || !p.filename().string().starts_with("step_")) continue;
    if (!best || p.filename() > best->filename()) best = p;
  }
  return best;
}

TrainReport dry_run(const RunConfig& config, const fs::path& out_dir) {
  config.validate();
  const RunConfig cfg = resolve_noise(config);
  TrainReport r;
  r.status = "dry-run";
  r.delta = cfg.resolved_delta();
  r.noise_multiplier = cfg.dp.noise_multiplier;
  r.eps_full_schedule = full_schedule_epsilon(cfg);
  r.eps_spent = 0.0;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(out_dir / "config.resolved", format_config(cfg));
    r.out_dir = out_dir;
    r.report_path = out_dir / "report.jsonl";
    append_line(r.report_path, report_json(r, cfg).dump());
  }
  return r;
}

TrainReport run_training(const RunConfig& config, const TrainOptions& options) {
  config.validate();
  const RunConfig cfg = resolve_noise(config);
  const fs::path dir = options.out_dir.empty() ? fs::path(cfg.output_dir) : options.out_dir;
  if (options.resume) {
    const fs::path snap = dir / "config.resolved";
    if (!fs::exists(snap)) throw ConfigError("", "--resume: no config.resolved in " + dir.string());
    if (read_text(snap) != format_config(cfg)) {
      throw ConfigError("", "--resume: config differs from " + snap.string());
    }
  }
  if (cfg.model.precision == Precision::kFloat64) return Trainer<double>(cfg, options, dir).run();
  return Trainer<float>(cfg, options, dir).run();
}

}  // namespace dpbert
