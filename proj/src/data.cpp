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

#include "dpbert/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>

#include "dpbert/errors.hpp"

namespace dpbert {

namespace {

bool is_special(TokenId t) { return t == kPadToken || t == kClsToken || t == kSepToken; }

// Content token of rank r drawn with probability proportional to
// (r + 1)^-exponent.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t content, double exponent) : cdf_(content) {
    double acc = 0.0;
    for (std::size_t r = 0; r < content; ++r) {
      acc += std::pow(static_cast<double>(r + 1), -exponent);
      cdf_[r] = acc;
    }
    for (auto& c : cdf_) c /= acc;
  }

  TokenId operator()(RngCursor& cur) const {
    const double u = cur.uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return kFirstContentToken + static_cast<TokenId>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace

void SyntheticCorpusSpec::validate() const {
  if (examples < 1) throw ParameterError("data.examples must be >= 1");
  if (seq_len < 4) throw ParameterError("data sequence length must be >= 4");
  if (vocab_size <= static_cast<std::size_t>(kFirstContentToken)) {
    throw ParameterError("vocabulary must have more than 4 tokens");
  }
  if (!(concentration >= 0.0 && concentration <= 1.0)) {
    throw ParameterError("data.concentration must be in [0, 1]");
  }
  if (branching < 1 || branching > content_tokens()) {
    throw ParameterError("data.branching must be in [1, content tokens]");
  }
  if (!(zipf_exponent >= 0.0 && zipf_exponent <= 4.0)) {
    throw ParameterError("data.zipf_exponent must be in [0, 4]");
  }
}

TransitionTable build_transition_table(const SyntheticCorpusSpec& spec) {
  spec.validate();
  const std::size_t content = spec.content_tokens();
  TransitionTable table;
  table.successors.resize(content);
  const ZipfSampler draw(content, spec.zipf_exponent);
  RngCursor cur(RngStream(spec.seed, 0, 0, Purpose::kCorpusTable));
  for (auto& succ : table.successors) {
    while (succ.size() < spec.branching) {
      const TokenId t = draw(cur);
      if (std::find(succ.begin(), succ.end(), t) == succ.end()) succ.push_back(t);
    }
  }
  // Linearly decreasing preference: branching, branching - 1, ..., 1.
  double total = 0.0;
  for (std::size_t j = 0; j < spec.branching; ++j) {
    table.weights.push_back(static_cast<double>(spec.branching - j));
    total += table.weights.back();
  }
  for (auto& w : table.weights) w /= total;
  return table;
}

Corpus generate_sequences(const SyntheticCorpusSpec& spec, std::uint64_t first,
                          std::uint64_t count) {
  const TransitionTable table = build_transition_table(spec);
  const std::size_t L = spec.seq_len;
  const ZipfSampler draw(spec.content_tokens(), spec.zipf_exponent);
  Corpus corpus{spec.vocab_size, L, spec.seed, {}};
  corpus.sequences.reserve(count);
  for (std::uint64_t i = first; i < first + count; ++i) {
    RngCursor cur(RngStream(spec.seed, 0, i, Purpose::kCorpus));
    std::vector<TokenId> seq(L);
    seq[0] = kClsToken;
    const std::size_t lo = std::max<std::size_t>(2, L / 4);
    const std::size_t hi = std::min<std::size_t>(L - 2, (3 * L) / 4);
    const std::size_t sep = lo + static_cast<std::size_t>(cur.below(hi - lo + 1));
    seq[sep] = kSepToken;
    TokenId prev = kPadToken;
    for (std::size_t p = 1; p < L; ++p) {
      if (p == sep) {
        prev = kPadToken;  // segment B restarts the chain
        continue;
      }
      TokenId next;
      if (prev == kPadToken) {
        next = draw(cur);
      } else if (cur.uniform() < spec.concentration) {
        const double u = cur.uniform();
        const auto& succ = table.successors[static_cast<std::size_t>(prev - kFirstContentToken)];
        std::size_t j = 0;
        double acc = table.weights[0];
        while (u >= acc && j + 1 < succ.size()) acc += table.weights[++j];
        next = succ[j];
      } else {
        next = draw(cur);
      }
      seq[p] = next;
      prev = next;
    }
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

std::vector<TokenId> token_types_for(std::span<const TokenId> sequence) {
  std::vector<TokenId> types(sequence.size(), 0);
  bool after_sep = false;
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    types[i] = after_sep ? 1 : 0;
    if (sequence[i] == kSepToken) after_sep = true;
  }
  return types;
}

std::size_t masked_count(double rate, std::size_t length) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ParameterError("mask rate must be in [0, 1]");
  return static_cast<std::size_t>(std::ceil(rate * static_cast<double>(length) - 1e-9));
}

MaskedExample apply_masking(std::span<const TokenId> sequence, double rate,
                            const RngStream& stream) {
  const std::size_t k = masked_count(rate, sequence.size());
  std::vector<std::int32_t> candidates;
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    if (!is_special(sequence[i])) candidates.push_back(static_cast<std::int32_t>(i));
  }
  if (candidates.size() < k) {
    throw DataError("sequence has " + std::to_string(candidates.size()) +
                    " maskable positions, needs " + std::to_string(k));
  }
  RngCursor cur(stream);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(cur.below(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(k);
  std::sort(candidates.begin(), candidates.end());

  MaskedExample ex;
  ex.input_ids.assign(sequence.begin(), sequence.end());
  ex.token_types = token_types_for(sequence);
  ex.masked_positions = candidates;
  for (auto p : candidates) {
    ex.labels.push_back(sequence[static_cast<std::size_t>(p)]);
    ex.input_ids[static_cast<std::size_t>(p)] = kMaskToken;
  }
  return ex;
}

std::vector<TokenId> unmask(const MaskedExample& example) {
  std::vector<TokenId> seq = example.input_ids;
  for (std::size_t i = 0; i < example.masked_positions.size(); ++i) {
    seq[static_cast<std::size_t>(example.masked_positions[i])] = example.labels[i];
  }
  return seq;
}

std::vector<MaskedExample> mask_corpus(const Corpus& corpus, double rate, std::uint64_t seed,
                                       std::uint64_t first_index) {
  std::vector<MaskedExample> out;
  out.reserve(corpus.sequences.size());
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
    out.push_back(apply_masking(corpus.sequences[i], rate,
                                RngStream(seed, 0, first_index + i, Purpose::kMask)));
  }
  return out;
}

std::string_view sampling_mode_name(SamplingMode mode) {
  return mode == SamplingMode::kPoisson ? "poisson" : "fixed";
}

SamplingMode parse_sampling_mode(std::string_view name) {
  if (name == "poisson") return SamplingMode::kPoisson;
  if (name == "fixed") return SamplingMode::kFixed;
  throw ParameterError("unknown sampling mode '" + std::string(name) + "'");
}

std::vector<std::uint64_t> sample_poisson(std::uint64_t n, double q, const RngStream& stream) {
  if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("sampling probability must be in [0, 1]");
  std::vector<std::uint64_t> out;
  if (q == 0.0) return out;
  for (std::uint64_t i = 0; i < n; ++i) {
    if (q == 1.0 || stream.uniform(i) < q) out.push_back(i);
  }
  return out;
}

std::vector<std::uint64_t> sample_batch(std::uint64_t n, std::uint64_t expected_batch,
                                        SamplingMode mode, const RngStream& stream) {
  if (n == 0) throw ParameterError("sample_batch: empty dataset");
  if (mode == SamplingMode::kPoisson) {
    if (expected_batch > n) throw ParameterError("sample_batch: q = batch / n exceeds 1");
    return sample_poisson(n, static_cast<double>(expected_batch) / static_cast<double>(n), stream);
  }
  if (expected_batch > n) {
    throw ParameterError("sample_batch: fixed batch of " + std::to_string(expected_batch) +
                         " exceeds dataset size " + std::to_string(n));
  }
  // Floyd's algorithm: exactly k distinct indices, O(k) draws.
  std::unordered_set<std::uint64_t> chosen;
  RngCursor cur(stream);
  for (std::uint64_t j = n - expected_batch; j < n; ++j) {
    const std::uint64_t t = cur.below(j + 1);
    chosen.insert(chosen.contains(t) ? j : t);
  }
  std::vector<std::uint64_t> out(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  out << "dpbert-corpus " << corpus.vocab_size << ' ' << corpus.seq_len << ' ' << corpus.seed
      << '\n';
  for (const auto& seq : corpus.sequences) {
    for (std::size_t i = 0; i < seq.size(); ++i) out << (i ? " " : "") << seq[i];
    out << '\n';
  }
}

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  if (!std::getline(in, line)) throw DataError("corpus: missing header line");
  {
    std::istringstream hs(line);
    std::string magic;
    if (!(hs >> magic >> corpus.vocab_size >> corpus.seq_len >> corpus.seed) ||
        magic != "dpbert-corpus") {
      throw DataError("corpus: malformed header '" + line + "'");
    }
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<TokenId> seq;
    long long id = 0;
    while (ls >> id) {
      if (id < 0 || static_cast<std::size_t>(id) >= corpus.vocab_size) {
        throw DataError("corpus line " + std::to_string(lineno) + ": id out of range");
      }
      seq.push_back(static_cast<TokenId>(id));
    }
    if (!ls.eof() || seq.size() != corpus.seq_len) {
      throw DataError("corpus line " + std::to_string(lineno) + ": expected " +
                      std::to_string(corpus.seq_len) + " ids");
    }
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_corpus(out, corpus);
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_corpus(in);
}

}  // namespace dpbert
