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

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "json.hpp"

#include "dpbert/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host order, which must be little-endian");

namespace dpbert {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'D', 'P', 'B', 'C', 'K', 'P', 'T', '1'};

template <Real T>
void add_tensors(json& list, std::vector<const Tensor<T>*>& order, const std::string& prefix,
                 const ParameterSet<T>& set, std::uint64_t& offset) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& t = set.at(i);
    const std::uint64_t bytes = t.size() * sizeof(T);
    list.push_back({{"name", prefix + set.names()[i]},
                    {"shape", t.shape()},
                    {"offset", offset},
                    {"bytes", bytes}});
    order.push_back(&t);
    offset += bytes;
  }
}

std::uint64_t read_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  std::memcpy(&v, p, sizeof v);
  return v;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Parsed {
  json manifest;
  std::vector<unsigned char> bytes;
  std::size_t payload_start = 0;
};

Parsed parse_file(const std::filesystem::path& path) {
  Parsed p;
  p.bytes = read_file(path);
  const auto what = "checkpoint " + path.string() + ": ";
  if (p.bytes.size() < 16 || std::memcmp(p.bytes.data(), kMagic, 8) != 0) {
    throw LoadError(what + "bad magic, not a checkpoint file");
  }
  const std::uint64_t mlen = read_u64(p.bytes.data() + 8);
  if (mlen > p.bytes.size() - 16) throw LoadError(what + "truncated manifest");
  try {
    p.manifest = json::parse(p.bytes.begin() + 16, p.bytes.begin() + 16 + static_cast<long>(mlen));
  } catch (const json::exception& e) {
    throw LoadError(what + "malformed manifest: " + e.what());
  }
  p.payload_start = 16 + mlen;
  const int version = p.manifest.value("version", -1);
  if (version != kCheckpointVersion) {
    throw LoadError(what + "format version mismatch: file has " + std::to_string(version) +
                    ", reader expects " + std::to_string(kCheckpointVersion));
  }
  return p;
}

}  // namespace

template <Real T>
void save_checkpoint(const std::filesystem::path& path, const TrainingState<T>& state) {
  state.params.require_same_layout(state.optimizer.m, "checkpoint adam_m");
  state.params.require_same_layout(state.optimizer.v, "checkpoint adam_v");
  json tensors = json::array();
  std::vector<const Tensor<T>*> order;
  std::uint64_t offset = 0;
  add_tensors(tensors, order, "param/", state.params, offset);
  add_tensors(tensors, order, "adam_m/", state.optimizer.m, offset);
  add_tensors(tensors, order, "adam_v/", state.optimizer.v, offset);

  json manifest = {
      {"version", kCheckpointVersion},
      {"precision", std::string(precision_name(precision_of<T>()))},
      {"step", state.step},
      {"optimizer_step", state.optimizer.step},
      {"rng", {{"generator", "philox4x32-10"}, {"seed", state.seed}, {"next_step", state.step + 1}}},
      {"schedule_position", state.step},
      {"examples_seen", state.examples_seen},
      {"eps_spent", std::isfinite(state.eps_spent) ? json(state.eps_spent) : json(nullptr)},
      // The bit pattern is authoritative; it also carries infinity for
      // non-private runs.
      {"eps_spent_bits", std::bit_cast<std::uint64_t>(state.eps_spent)},
      {"config_digest", state.config_digest},
      {"tensors", tensors},
      {"payload_bytes", offset},
  };
  const std::string text = manifest.dump();
  const std::uint64_t mlen = text.size();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&mlen), sizeof mlen);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* t : order) {
      out.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->size() * sizeof(T)));
    }
    out.flush();
    if (!out) throw LoadError("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <Real T>
TrainingState<T> load_checkpoint(const std::filesystem::path& path) {
  const Parsed p = parse_file(path);
  const auto what = "checkpoint " + path.string() + ": ";
  const json& m = p.manifest;
  TrainingState<T> state;
  try {
    const auto precision = m.at("precision").get<std::string>();
    if (precision != precision_name(precision_of<T>())) {
      throw LoadError(what + "precision mismatch: file holds " + precision + ", reader expects " +
                      std::string(precision_name(precision_of<T>())));
    }
    const std::uint64_t payload_bytes = m.at("payload_bytes").get<std::uint64_t>();
    const std::uint64_t available = p.bytes.size() - p.payload_start;
    if (available < payload_bytes) {
      throw LoadError(what + "truncated payload: manifest declares " +
                      std::to_string(payload_bytes) + " bytes, file holds " +
                      std::to_string(available));
    }
    if (available > payload_bytes) {
      throw LoadError(what + "trailing bytes after payload (" +
                      std::to_string(available - payload_bytes) + ")");
    }

    struct Entry {
      std::string name;
      Shape shape;
      std::uint64_t offset, bytes;
    };
    std::vector<Entry> entries;
    for (const auto& t : m.at("tensors")) {
      entries.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>(),
                         t.at("offset").get<std::uint64_t>(), t.at("bytes").get<std::uint64_t>()});
    }
    // Manifest order must walk the payload without overlap or gap.
    std::uint64_t cursor = 0;
    for (const auto& e : entries) {
      if (e.offset < cursor) throw LoadError(what + "offset overlap at tensor " + e.name);
      if (e.offset > cursor) throw LoadError(what + "gap in payload before tensor " + e.name);
      std::uint64_t elems = 1;
      for (auto d : e.shape) elems *= d;
      if (e.shape.empty() || elems == 0 || e.bytes != elems * sizeof(T)) {
        throw LoadError(what + "byte length of tensor " + e.name + " does not match its shape");
      }
      cursor = e.offset + e.bytes;
    }
    if (cursor != payload_bytes) throw LoadError(what + "tensors do not cover the payload");

    const unsigned char* base = p.bytes.data() + p.payload_start;
    for (const auto& e : entries) {
      Tensor<T> t(e.shape);
      std::memcpy(t.data(), base + e.offset, e.bytes);
      if (e.name.starts_with("param/")) {
        state.params.add(e.name.substr(6), std::move(t));
      } else if (e.name.starts_with("adam_m/")) {
        state.optimizer.m.add(e.name.substr(7), std::move(t));
      } else if (e.name.starts_with("adam_v/")) {
        state.optimizer.v.add(e.name.substr(7), std::move(t));
      } else {
        throw LoadError(what + "unknown tensor role in " + e.name);
      }
    }
    state.params.require_same_layout(state.optimizer.m, "checkpoint adam_m");
    state.params.require_same_layout(state.optimizer.v, "checkpoint adam_v");
    state.step = m.at("step").get<std::uint64_t>();
    state.optimizer.step = m.at("optimizer_step").get<std::uint64_t>();
    state.seed = m.at("rng").at("seed").get<std::uint64_t>();
    state.examples_seen = m.at("examples_seen").get<std::uint64_t>();
    state.eps_spent = std::bit_cast<double>(m.at("eps_spent_bits").get<std::uint64_t>());
    state.config_digest = m.at("config_digest").get<std::string>();
  } catch (const json::exception& e) {
    throw LoadError(what + "malformed manifest: " + e.what());
  } catch (const StructuralError& e) {
    throw LoadError(what + e.what());
  }
  return state;
}

Precision checkpoint_precision(const std::filesystem::path& path) {
  const Parsed p = parse_file(path);
  try {
    return parse_precision(p.manifest.at("precision").get<std::string>());
  } catch (const json::exception& e) {
    throw LoadError("checkpoint " + path.string() + ": malformed manifest: " + e.what());
  }
}

template void save_checkpoint(const std::filesystem::path&, const TrainingState<float>&);
template void save_checkpoint(const std::filesystem::path&, const TrainingState<double>&);
template TrainingState<float> load_checkpoint(const std::filesystem::path&);
template TrainingState<double> load_checkpoint(const std::filesystem::path&);

}  // namespace dpbert
