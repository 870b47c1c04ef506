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


#include "dpbert/checkpoint.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "dpbert/errors.hpp"
#include "test_util.hpp"

namespace dpbert {
namespace {

namespace fs = std::filesystem;
using testing::fresh_dir;
using testing::random_parameters;
using testing::tiny_config;

ParameterSet<float> to_float(const ParameterSet<double>& p) {
  ParameterSet<float> out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    Tensor<float> t(p.at(i).shape());
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = static_cast<float>(p.at(i)[j]);
    out.add(p.names()[i], std::move(t));
  }
  return out;
}

TrainingState<double> sample_state() {
  const auto c = tiny_config();
  TrainingState<double> s;
  s.params = random_parameters(c, 1);
  s.optimizer = {17, random_parameters(c, 2), random_parameters(c, 3)};
  for (auto& t : s.optimizer.v.tensors()) {
    for (auto& x : t.values()) x = x * x;
  }
  s.seed = 99;
  s.step = 17;
  s.examples_seen = 1088;
  s.eps_spent = 0.123456789012345;
  s.config_digest = "00ff";
  return s;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::string& b) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << b;
}

// Rewrites the manifest of a saved checkpoint through `edit`.
template <typename F>
void edit_manifest(const fs::path& p, F edit) {
  const std::string b = read_bytes(p);
  std::uint64_t len = 0;
  std::memcpy(&len, b.data() + 8, 8);
  auto m = nlohmann::json::parse(b.substr(16, len));
  edit(m);
  const std::string text = m.dump();
  const std::uint64_t n = text.size();
  std::string out = b.substr(0, 8);
  out.append(reinterpret_cast<const char*>(&n), 8);
  out += text;
  out += b.substr(16 + len);
  write_bytes(p, out);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const auto dir = fresh_dir("ckpt_rt");
  const auto s = sample_state();
  save_checkpoint(dir / "a.ckpt", s);
  EXPECT_EQ(load_checkpoint<double>(dir / "a.ckpt"), s);
  EXPECT_EQ(checkpoint_precision(dir / "a.ckpt"), Precision::kFloat64);
  EXPECT_FALSE(fs::exists(dir / "a.ckpt.tmp"));
  // Saving the loaded state again reproduces the file byte for byte.
  save_checkpoint(dir / "b.ckpt", load_checkpoint<double>(dir / "a.ckpt"));
  EXPECT_EQ(read_bytes(dir / "a.ckpt"), read_bytes(dir / "b.ckpt"));
}

TEST(Checkpoint, InfiniteEpsilonSurvives) {
  const auto dir = fresh_dir("ckpt_inf");
  auto s = sample_state();
  s.eps_spent = INFINITY;
  save_checkpoint(dir / "a.ckpt", s);
  EXPECT_TRUE(std::isinf(load_checkpoint<double>(dir / "a.ckpt").eps_spent));
}

TEST(Checkpoint, Float32RoundTrip) {
  const auto dir = fresh_dir("ckpt_f32");
  const auto d = sample_state();
  TrainingState<float> s;
  s.params = to_float(d.params);
  s.optimizer = {d.optimizer.step, to_float(d.optimizer.m), to_float(d.optimizer.v)};
  s.step = 3;
  save_checkpoint(dir / "a.ckpt", s);
  EXPECT_EQ(load_checkpoint<float>(dir / "a.ckpt"), s);
  EXPECT_EQ(checkpoint_precision(dir / "a.ckpt"), Precision::kFloat32);
  EXPECT_THROW(load_checkpoint<double>(dir / "a.ckpt"), LoadError);
}

TEST(Checkpoint, TruncationIsDetected) {
  const auto dir = fresh_dir("ckpt_trunc");
  save_checkpoint(dir / "a.ckpt", sample_state());
  const auto full = read_bytes(dir / "a.ckpt");
  for (std::size_t cut : {full.size() - 1, full.size() - 8, full.size() / 2, std::size_t{20},
                          std::size_t{12}, std::size_t{3}, std::size_t{0}}) {
    write_bytes(dir / "b.ckpt", full.substr(0, cut));
    EXPECT_THROW(load_checkpoint<double>(dir / "b.ckpt"), LoadError) << cut;
  }
  write_bytes(dir / "b.ckpt", full + "x");
  EXPECT_THROW(load_checkpoint<double>(dir / "b.ckpt"), LoadError);
  EXPECT_THROW(load_checkpoint<double>(dir / "missing.ckpt"), LoadError);
}

TEST(Checkpoint, BadMagic) {
  const auto dir = fresh_dir("ckpt_magic");
  save_checkpoint(dir / "a.ckpt", sample_state());
  auto b = read_bytes(dir / "a.ckpt");
  b[0] = 'X';
  write_bytes(dir / "a.ckpt", b);
  EXPECT_THROW(load_checkpoint<double>(dir / "a.ckpt"), LoadError);
}

TEST(Checkpoint, ManifestDefects) {
  const auto dir = fresh_dir("ckpt_manifest");
  const auto s = sample_state();
  const auto expect_error = [&](auto edit, const char* needle) {
    save_checkpoint(dir / "a.ckpt", s);
    edit_manifest(dir / "a.ckpt", edit);
    try {
      load_checkpoint<double>(dir / "a.ckpt");
      ADD_FAILURE() << "no error for " << needle;
    } catch (const LoadError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_error([](auto& m) { m["version"] = 2; }, "version");
  expect_error([](auto& m) { m["tensors"][1]["offset"] = m["tensors"][1]["offset"].template get<std::uint64_t>() - 8; },
               "overlap");
  expect_error([](auto& m) { m["tensors"][1]["offset"] = m["tensors"][1]["offset"].template get<std::uint64_t>() + 8; },
               "gap");
  expect_error([](auto& m) { m["tensors"][0]["shape"][0] = 1000; }, "shape");
  expect_error([](auto& m) { m.erase("tensors"); }, "tensors");
}

TEST(Checkpoint, LayoutMismatchOnSave) {
  const auto dir = fresh_dir("ckpt_layout");
  auto s = sample_state();
  s.optimizer.m = random_parameters(tiny_config(29), 1);
  EXPECT_ANY_THROW(save_checkpoint(dir / "a.ckpt", s));
}

}  // namespace
}  // namespace dpbert
