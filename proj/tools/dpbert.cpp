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

// dpbert: train, account, calibrate, probe, efficiency-report.
//
// Exit codes: 0 success, 1 usage or config error, 2 runtime error.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dpbert/accountant.hpp"
#include "dpbert/checkpoint.hpp"
#include "dpbert/config.hpp"
#include "dpbert/data.hpp"
#include "dpbert/errors.hpp"
#include "dpbert/instrumentation.hpp"
#include "dpbert/model.hpp"
#include "dpbert/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct CommonFlags {
  std::string config = "desk_preset";
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  bool dry_run = false;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "config file or preset name");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--seed", f.seed, "run seed override");
  app->add_option("--mode", f.mode, "sampling mode override")
      ->check(CLI::IsMember({"poisson", "fixed"}));
  app->add_flag("--dry-run", f.dry_run, "accounting only, no training");
}

dpbert::RunConfig load(const CommonFlags& f) {
  dpbert::RunConfig cfg;
  if (fs::exists(f.config)) {
    cfg = dpbert::load_config(f.config);
  } else if (auto preset = dpbert::preset_by_name(f.config)) {
    cfg = *preset;
  } else {
    throw dpbert::ConfigError("", "no config file or preset named '" + f.config + "'");
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.mode) cfg.sampling = dpbert::parse_sampling_mode(*f.mode);
  if (!f.out.empty()) cfg.output_dir = f.out;
  cfg.validate();
  return cfg;
}

ordered_json eps_json(double eps) {
  return std::isfinite(eps) ? ordered_json(eps) : ordered_json(nullptr);
}

// Writes `records` as JSON lines into dir/name when dir is set.
void write_records(const std::string& dir, const std::string& name,
                   const std::vector<ordered_json>& records) {
  if (dir.empty()) return;
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / name, std::ios::trunc);
  if (!out) throw dpbert::DataError("cannot write " + (fs::path(dir) / name).string());
  for (const auto& r : records) out << r.dump() << '\n';
}

int cmd_train(const CommonFlags& f, bool resume, std::optional<std::uint64_t> max_steps,
              unsigned threads, bool quiet) {
  const dpbert::RunConfig cfg = load(f);
  if (f.dry_run) {
    const auto r = dpbert::dry_run(cfg, cfg.output_dir);
    std::cout << "dry run: sigma " << std::setprecision(10) << r.noise_multiplier << "  epsilon "
              << r.eps_full_schedule << "  delta " << r.delta << "\n";
    return 0;
  }
  dpbert::TrainOptions opt;
  opt.resume = resume;
  opt.max_steps = max_steps;
  opt.threads = threads;
  opt.progress = quiet ? nullptr : &std::cout;
  const auto r = dpbert::run_training(cfg, opt);
  std::cout << r.status << ": step " << r.final_step << "  examples " << r.examples_seen
            << "  mlm_acc " << (r.final_accuracy ? std::to_string(*r.final_accuracy) : "n/a")
            << "  epsilon " << r.eps_spent << "  delta " << r.delta << "\n"
            << "metrics: " << r.metrics_path.string() << "\n";
  return 0;
}

int cmd_show_config(const CommonFlags& f) {
  std::cout << dpbert::format_config(load(f));
  return 0;
}

int cmd_account(const CommonFlags& f) {
  dpbert::RunConfig cfg = dpbert::resolve_noise(load(f));
  const auto params = cfg.accounting_params();
  const auto report = dpbert::account(params);
  std::vector<ordered_json> records;
  std::cout << "order  rdp_epsilon  dp_epsilon\n";
  const double log_inv_delta = std::log(1.0 / report.delta);
  for (std::size_t i = 0; i < report.curve.orders.size(); ++i) {
    const int a = report.curve.orders[i];
    const double rdp = report.curve.values[i];
    const double dp = rdp + log_inv_delta / (a - 1);
    std::cout << std::setw(5) << a << "  " << std::setprecision(10) << std::setw(12) << rdp << "  "
              << dp << "\n";
    records.push_back({{"kind", "order"}, {"order", a}, {"rdp_epsilon", rdp}, {"dp_epsilon", dp}});
  }
  ordered_json summary = {{"kind", "account"},
                          {"epsilon", report.epsilon},
                          {"delta", report.delta},
                          {"optimal_order", report.optimal_order},
                          {"noise_multiplier", cfg.dp.noise_multiplier},
                          {"total_steps", params.total_steps()},
                          {"dataset_size", params.dataset_size},
                          {"approximate", report.approximate}};
  records.push_back(summary);
  std::cout << "epsilon " << std::setprecision(10) << report.epsilon << "  delta " << report.delta
            << "  order " << report.optimal_order << "  sigma " << cfg.dp.noise_multiplier
            << (report.approximate ? "  (fixed-size sampling: Poisson analysis, approximate)" : "")
            << "\n";
  write_records(f.out, "account.jsonl", records);
  return 0;
}

int cmd_calibrate(const CommonFlags& f, std::optional<double> target, double tolerance) {
  dpbert::RunConfig cfg = load(f);
  const double eps_target =
      target ? *target : (cfg.target_epsilon ? *cfg.target_epsilon : throw dpbert::ConfigError(
                                                   "privacy.target_epsilon",
                                                   "no target: pass --target or set the key"));
  const auto segments = dpbert::accounting_segments(cfg.batch, cfg.data_examples);
  const double sigma = dpbert::calibrate_sigma(eps_target, cfg.resolved_delta(), segments, tolerance);
  cfg.dp.noise_multiplier = sigma;
  const auto report = dpbert::account(cfg.accounting_params());
  std::cout << "sigma " << std::setprecision(15) << sigma << "  epsilon " << report.epsilon
            << "  delta " << report.delta << "  order " << report.optimal_order << "\n";
  write_records(f.out, "calibrate.jsonl",
                {{{"kind", "calibrate"},
                  {"target_epsilon", eps_target},
                  {"noise_multiplier", sigma},
                  {"epsilon", report.epsilon},
                  {"delta", report.delta},
                  {"optimal_order", report.optimal_order}}});
  return 0;
}

dpbert::ParameterSet<double> to_double(const dpbert::ParameterSet<float>& p) {
  dpbert::ParameterSet<double> out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    dpbert::Tensor<double> t(p.at(i).shape());
    auto src = p.at(i).values();
    for (std::size_t k = 0; k < src.size(); ++k) t[k] = src[k];
    out.add(p.names()[i], std::move(t));
  }
  return out;
}

int cmd_probe(const CommonFlags& f, const std::string& checkpoint, const std::string& group,
              std::vector<double> alphas, std::uint64_t examples) {
  const dpbert::RunConfig cfg = load(f);
  dpbert::ModelConfig model = cfg.model;
  model.precision = dpbert::Precision::kFloat64;
  dpbert::ParameterSet<double> params;
  if (checkpoint.empty()) {
    params = dpbert::init_parameters<double>(model, dpbert::RngStream(cfg.seed, 0, 0, dpbert::Purpose::kInit));
  } else if (dpbert::checkpoint_precision(checkpoint) == dpbert::Precision::kFloat64) {
    params = dpbert::load_checkpoint<double>(checkpoint).params;
  } else {
    params = to_double(dpbert::load_checkpoint<float>(checkpoint).params);
  }
  auto spec = cfg.corpus_spec();
  spec.examples = examples;
  const auto probe = dpbert::mask_corpus(dpbert::generate_corpus(spec), cfg.mask_rate, cfg.data_seed);
  std::vector<ordered_json> records;
  std::cout << "group " << group << "\n  alpha  max_logit_dev  grad_norm_ratio  grad_weight_cos\n";
  for (double a : alphas) {
    const auto r = dpbert::scale_invariance_probe(model, params, group, a, probe);
    std::cout << std::setprecision(6) << std::setw(7) << a << "  " << std::setw(13)
              << r.max_logit_deviation << "  " << std::setw(15) << r.gradient_norm_ratio << "  "
              << r.gradient_weight_cosine << "\n";
    records.push_back({{"kind", "probe"},
                       {"group", group},
                       {"alpha", a},
                       {"max_logit_deviation", r.max_logit_deviation},
                       {"gradient_norm_ratio", r.gradient_norm_ratio},
                       {"gradient_weight_cosine", r.gradient_weight_cosine}});
  }
  write_records(f.out, "probe.jsonl", records);
  return 0;
}

int cmd_efficiency(const std::string& baseline, const std::string& candidate,
                   std::optional<double> target, double fraction, const std::string& out) {
  const auto a = dpbert::read_metrics(baseline);
  const auto b = dpbert::read_metrics(candidate);
  const auto r = dpbert::efficiency_report(a, b, target, fraction);
  auto show = [](const std::optional<std::uint64_t>& v) {
    return v ? std::to_string(*v) : std::string("not reached");
  };
  std::cout << "target mlm_acc " << std::setprecision(6) << r.target << "\n"
            << "baseline  examples at target: " << show(r.baseline_examples) << "\n"
            << "candidate examples at target: " << show(r.candidate_examples) << "\n";
  if (r.reduction_percent) {
    std::cout << "reduction: " << std::setprecision(4) << *r.reduction_percent << "%\n";
  } else {
    std::cout << "reduction: undefined\n";
  }
  auto opt_json = [](const auto& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  write_records(out, "efficiency.jsonl",
                {{{"kind", "efficiency"},
                  {"baseline", baseline},
                  {"candidate", candidate},
                  {"target", r.target},
                  {"baseline_examples", opt_json(r.baseline_examples)},
                  {"candidate_examples", opt_json(r.candidate_examples)},
                  {"reduction_percent", opt_json(r.reduction_percent)}}});
  return r.reduction_percent ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private masked-language-model pretraining"};
  app.require_subcommand(1);

  CommonFlags train_f, account_f, calib_f, probe_f, show_f;
  bool resume = false, quiet = false;
  std::optional<std::uint64_t> max_steps;
  unsigned threads = 0;
  auto* train = app.add_subcommand("train", "run DP training");
  add_common(train, train_f);
  train->add_flag("--resume", resume, "continue from the newest checkpoint in the output directory");
  train->add_option("--max-steps", max_steps, "stop after this step");
  train->add_option("--threads", threads, "worker threads (0: all cores)");
  train->add_flag("--quiet", quiet, "no progress lines");

  auto* account = app.add_subcommand("account", "privacy accounting report");
  add_common(account, account_f);

  auto* show = app.add_subcommand("show-config", "print the config with every key");
  show->add_option("--config", show_f.config, "config file or preset name");
  show->add_option("--seed", show_f.seed, "run seed override");

  std::optional<double> calib_target;
  double tolerance = 1e-3;
  auto* calibrate = app.add_subcommand("calibrate", "noise multiplier for a target epsilon");
  add_common(calibrate, calib_f);
  calibrate->add_option("--target", calib_target, "target epsilon");
  calibrate->add_option("--tolerance", tolerance, "accepted epsilon excess at the bracket edge");

  std::string checkpoint, group = std::string(dpbert::kConjointEmbedding);
  std::vector<double> alphas{0.5, 2.0, 10.0};
  std::uint64_t probe_examples = 8;
  auto* probe = app.add_subcommand("probe", "layer-norm scale-invariance probe");
  add_common(probe, probe_f);
  probe->add_option("--checkpoint", checkpoint, "parameters to probe (default: fresh init)");
  probe->add_option("--group", group, "tensor name or embeddings.conjoint");
  probe->add_option("--alpha", alphas, "scale factors");
  probe->add_option("--examples", probe_examples, "probe batch size")->check(CLI::PositiveNumber);

  std::string base_log, cand_log, eff_out;
  std::optional<double> eff_target;
  double fraction = 0.9;
  auto* eff = app.add_subcommand("efficiency-report",
                                 "examples seen to reach a shared accuracy, two metrics logs");
  eff->add_option("baseline", base_log, "metrics log of the reference run")->required();
  eff->add_option("candidate", cand_log, "metrics log of the compared run")->required();
  eff->add_option("--target", eff_target, "target MLM accuracy");
  eff->add_option("--fraction", fraction, "default target: fraction of the weaker run's best");
  eff->add_option("--out", eff_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(train_f, resume, max_steps, threads, quiet);
    if (*account) return cmd_account(account_f);
    if (*show) return cmd_show_config(show_f);
    if (*calibrate) return cmd_calibrate(calib_f, calib_target, tolerance);
    if (*probe) return cmd_probe(probe_f, checkpoint, group, alphas, probe_examples);
    if (*eff) return cmd_efficiency(base_log, cand_log, eff_target, fraction, eff_out);
  } catch (const dpbert::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
