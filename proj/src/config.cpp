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

#include "dpbert/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "dpbert/errors.hpp"

namespace dpbert {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key), "expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(std::string(key), "expected a finite number, got '" + std::string(v) + "'");
  }
  return out;
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

#define DPBERT_U64(KEY, FIELD)                                                         \
  Key {                                                                                \
    KEY, [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.FIELD)); }, \
        [](RunConfig& c, std::string_view v) {                                         \
          c.FIELD = static_cast<decltype(c.FIELD)>(to_u64(KEY, v));                    \
        }                                                                              \
  }
#define DPBERT_REAL(KEY, FIELD)                                   \
  Key {                                                           \
    KEY, [](const RunConfig& c) { return fmt(c.FIELD); },         \
        [](RunConfig& c, std::string_view v) { c.FIELD = to_double(KEY, v); } \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      DPBERT_U64("run.seed", seed),
      DPBERT_U64("run.eval_every", eval_every),
      DPBERT_U64("run.eval_examples", eval_examples),
      DPBERT_U64("run.checkpoint_every", checkpoint_every),
      Key{"run.output_dir", [](const RunConfig& c) { return c.output_dir; },
          [](RunConfig& c, std::string_view v) { c.output_dir = std::string(v); }},
      DPBERT_U64("model.vocab_size", model.vocab_size),
      DPBERT_U64("model.seq_len", model.seq_len),
      DPBERT_U64("model.width", model.width),
      DPBERT_U64("model.blocks", model.blocks),
      DPBERT_U64("model.heads", model.heads),
      DPBERT_U64("model.ff_width", model.ff_width),
      DPBERT_REAL("model.ln_xi", model.ln_xi),
      Key{"model.precision",
          [](const RunConfig& c) { return std::string(precision_name(c.model.precision)); },
          [](RunConfig& c, std::string_view v) {
            try {
              c.model.precision = parse_precision(v);
            } catch (const Error& e) {
              throw ConfigError("model.precision", e.what());
            }
          }},
      DPBERT_REAL("dp.clip_norm", dp.clip_norm),
      DPBERT_REAL("dp.noise_multiplier", dp.noise_multiplier),
      DPBERT_REAL("dp.beta1", dp.beta1),
      DPBERT_REAL("dp.beta2", dp.beta2),
      DPBERT_REAL("dp.weight_decay", dp.weight_decay),
      DPBERT_REAL("dp.adam_xi", dp.adam_xi),
      Key{"privacy.target_epsilon",
          [](const RunConfig& c) {
            return c.target_epsilon ? fmt(*c.target_epsilon) : std::string("none");
          },
          [](RunConfig& c, std::string_view v) {
            if (v == "none") {
              c.target_epsilon.reset();
            } else {
              c.target_epsilon = to_double("privacy.target_epsilon", v);
            }
          }},
      DPBERT_REAL("privacy.delta", delta),
      Key{"privacy.sampling",
          [](const RunConfig& c) { return std::string(sampling_mode_name(c.sampling)); },
          [](RunConfig& c, std::string_view v) {
            try {
              c.sampling = parse_sampling_mode(v);
            } catch (const Error& e) {
              throw ConfigError("privacy.sampling", e.what());
            }
          }},
      Key{"schedule.kind", [](const RunConfig& c) { return std::string(batch_kind_name(c.batch.kind)); },
          [](RunConfig& c, std::string_view v) {
            try {
              c.batch.kind = parse_batch_kind(v);
            } catch (const Error& e) {
              throw ConfigError("schedule.kind", e.what());
            }
          }},
      DPBERT_U64("schedule.base_batch", batch.base_size),
      DPBERT_U64("schedule.final_batch", batch.final_size),
      DPBERT_U64("schedule.ramp_steps", batch.ramp_steps),
      DPBERT_U64("schedule.stages", batch.stages),
      Key{"schedule.total_steps", [](const RunConfig& c) { return fmt(c.batch.total_steps); },
          [](RunConfig& c, std::string_view v) {
            c.batch.total_steps = to_u64("schedule.total_steps", v);
            c.lr.total_steps = c.batch.total_steps;
          }},
      DPBERT_REAL("lr.peak", lr.peak),
      DPBERT_U64("lr.warmup_steps", lr.warmup_steps),
      DPBERT_U64("data.examples", data_examples),
      DPBERT_U64("data.seed", data_seed),
      DPBERT_REAL("data.concentration", data_concentration),
      DPBERT_U64("data.branching", data_branching),
      DPBERT_REAL("data.zipf_exponent", data_zipf_exponent),
      DPBERT_REAL("data.mask_rate", mask_rate),
  };
  return table;
}

#undef DPBERT_U64
#undef DPBERT_REAL

// Runs `check`, turning a ParameterError into a ConfigError. The key is
// the full config key when the message starts with one, else `section`.
template <typename F>
void under_key(std::string_view section, F&& check) {
  try {
    check();
  } catch (const ParameterError& e) {
    const std::string what = e.what();
    const std::string word = what.substr(0, what.find(' '));
    const auto all = config_keys();
    const bool known = std::find(all.begin(), all.end(), word) != all.end();
    throw ConfigError(known ? word : std::string(section), e.what());
  }
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

double RunConfig::resolved_delta() const {
  return delta == 0.0 ? 1.0 / static_cast<double>(data_examples) : delta;
}

SyntheticCorpusSpec RunConfig::corpus_spec() const {
  return {data_examples, model.seq_len, model.vocab_size, data_seed, data_concentration,
          data_branching, data_zipf_exponent};
}

AccountingParams RunConfig::accounting_params() const {
  AccountingParams p;
  p.dataset_size = data_examples;
  p.segments = accounting_segments(batch, data_examples);
  p.noise_multiplier = dp.noise_multiplier;
  p.delta = delta;
  p.fixed_size_sampling = sampling == SamplingMode::kFixed;
  return p;
}

void RunConfig::validate() const {
  if (data_examples == 0) throw ConfigError("data.examples", "must be >= 1");
  under_key("model", [&] { model.validate(); });
  if (model.seq_len < 4) throw ConfigError("model.seq_len", "must be >= 4");
  under_key("dp", [&] { dp.validate(); });
  if (target_epsilon && !(*target_epsilon > 0.0)) {
    throw ConfigError("privacy.target_epsilon", "must be > 0");
  }
  if (!(delta >= 0.0 && delta < 1.0)) throw ConfigError("privacy.delta", "must be in (0, 1)");
  if (!(resolved_delta() < 1.0)) throw ConfigError("privacy.delta", "1/n must be < 1");
  if (batch.total_steps == 0) throw ConfigError("schedule.total_steps", "must be >= 1");
  if (batch.base_size == 0) throw ConfigError("schedule.base_batch", "must be >= 1");
  if (batch.final_size == 0) throw ConfigError("schedule.final_batch", "must be >= 1");
  if (batch.kind == BatchKind::kFixed && batch.final_size != batch.base_size) {
    throw ConfigError("schedule.final_batch", "must equal schedule.base_batch for kind fixed");
  }
  under_key("schedule", [&] { batch.validate(); });
  if (batch.final_size > data_examples || batch.base_size > data_examples) {
    throw ConfigError("schedule.final_batch", "batch size exceeds data.examples");
  }
  if (lr.total_steps != batch.total_steps) {
    throw ConfigError("schedule.total_steps", "lr and batch schedules disagree on total steps");
  }
  under_key("lr", [&] { lr.validate(); });
  if (eval_every == 0) throw ConfigError("run.eval_every", "must be >= 1");
  if (eval_examples == 0) throw ConfigError("run.eval_examples", "must be >= 1");
  if (checkpoint_every == 0) throw ConfigError("run.checkpoint_every", "must be >= 1");
  if (output_dir.empty()) throw ConfigError("run.output_dir", "must not be empty");
  if (data_concentration < 0.0 || data_concentration > 1.0) {
    throw ConfigError("data.concentration", "must be in [0, 1]");
  }
  if (data_branching == 0 || data_branching > model.vocab_size - kFirstContentToken) {
    throw ConfigError("data.branching", "must be in [1, content tokens]");
  }
  if (!(data_zipf_exponent >= 0.0 && data_zipf_exponent <= 4.0)) {
    throw ConfigError("data.zipf_exponent", "must be in [0, 4]");
  }
  if (!(mask_rate > 0.0 && mask_rate <= 1.0)) throw ConfigError("data.mask_rate", "must be in (0, 1]");
  // The longest segment layout leaves seq_len - 2 maskable positions.
  if (masked_count(mask_rate, model.seq_len) > model.seq_len - 2) {
    throw ConfigError("data.mask_rate", "masks more positions than a sequence can offer");
  }
}

RunConfig parse_config(std::string_view text, std::string_view origin, const RunConfig& base) {
  RunConfig cfg = base;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto where = std::string(origin) + ":" + std::to_string(lineno);
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("", where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto it = std::find_if(keys().begin(), keys().end(),
                                 [&](const Key& k) { return k.name == key; });
    if (it == keys().end()) throw ConfigError(key, where + ": unknown key");
    if (!seen.insert(key).second) throw ConfigError(key, where + ": repeated key");
    if (value.empty()) throw ConfigError(key, where + ": missing value");
    try {
      it->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(key, where + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string format_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& k : keys()) {
    const std::string s = k.name.substr(0, k.name.find('.'));
    if (s != section) {
      if (!section.empty()) out += '\n';
      section = s;
    }
    out += k.name + " = " + k.get(config) + '\n';
  }
  return out;
}

RunConfig paper_preset() {
  RunConfig c;
  c.seed = 0;
  c.output_dir = "runs/paper";
  c.eval_every = 50;
  c.eval_examples = 10000;
  c.checkpoint_every = 1000;
  c.model = {32000, 128, 1024, 24, 16, 4096, 1e-12, Precision::kFloat32};
  c.dp = {3.2429e-3, 1.0, 0.75, 0.9, 1.0, 1e-11};
  c.target_epsilon = 5.36;
  c.delta = 2.89e-9;
  c.sampling = SamplingMode::kPoisson;
  c.batch = {BatchKind::kFixed, 65536, 65536, 0, 1, 20000};
  c.lr = {6.0902e-4, 7500, 20000};
  c.data_examples = 346000000;
  c.data_seed = 0;
  c.validate();
  return c;
}

RunConfig desk_preset() {
  RunConfig c;
  c.seed = 0;
  c.output_dir = "runs/desk";
  c.eval_every = 50;
  c.eval_examples = 1000;
  c.checkpoint_every = 500;
  c.model = {512, 32, 64, 2, 4, 256, 1e-12, Precision::kFloat32};
  // Peak rate 5x the large-model value; decay scaled by 1/5 so the
  // per-step shrink lr * lambda is unchanged.
  c.dp = {3.2429e-3, 1.0, 0.75, 0.9, 0.2, 1e-11};
  c.target_epsilon = 5.36;
  c.delta = 0.0;
  c.sampling = SamplingMode::kPoisson;
  c.batch = {BatchKind::kFixed, 64, 64, 0, 1, 2000};
  c.lr = {3e-3, 750, 2000};
  c.data_examples = 65536;
  c.data_seed = 0;
  c.data_concentration = 0.9;
  c.data_branching = 4;
  c.data_zipf_exponent = 1.0;
  c.validate();
  return c;
}

RunConfig desk_nonprivate(RunConfig c) {
  c.dp.noise_multiplier = 0.0;
  c.dp.clip_norm = 1e6;
  c.dp.weight_decay = 0.0;
  c.target_epsilon.reset();
  c.validate();
  return c;
}

RunConfig desk_efficiency(bool increasing) {
  RunConfig c = desk_preset();
  c.eval_every = 4;
  c.eval_examples = 500;
  c.checkpoint_every = 60;
  c.batch = increasing ? BatchSchedule{BatchKind::kIncreasing, 256, 1024, 24, 4, 60}
                       : BatchSchedule{BatchKind::kFixed, 1024, 1024, 0, 1, 60};
  c.lr = {3e-3, 24, 60};
  c.validate();
  return c;
}

std::optional<RunConfig> preset_by_name(std::string_view name) {
  if (name == "paper_preset") return paper_preset();
  if (name == "desk_preset") return desk_preset();
  if (name == "desk_nonprivate") return desk_nonprivate(desk_preset());
  if (name == "desk_fixed") return desk_efficiency(false);
  if (name == "desk_increasing") return desk_efficiency(true);
  return std::nullopt;
}

std::vector<std::string> preset_names() {
  return {"paper_preset", "desk_preset", "desk_nonprivate", "desk_fixed", "desk_increasing"};
}

RunConfig resolve_noise(RunConfig config) {
  if (!config.target_epsilon) return config;
  const auto segments = accounting_segments(config.batch, config.data_examples);
  config.dp.noise_multiplier =
      calibrate_sigma(*config.target_epsilon, config.resolved_delta(), segments, 1e-3);
  config.target_epsilon.reset();
  return config;
}

}  // namespace dpbert
