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

// Synthetic MLM data: a seeded order-1 Markov chain over content tokens laid
// out as [CLS] segment-A [SEP] segment-B, static masking, and the two batch
// samplers (Poisson and fixed-size).

#ifndef DPBERT_DATA_HPP_
#define DPBERT_DATA_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "dpbert/example.hpp"
#include "dpbert/rng.hpp"

namespace dpbert {

struct SyntheticCorpusSpec {
  std::uint64_t examples = 1024;
  std::size_t seq_len = 32;
  std::size_t vocab_size = 512;
  std::uint64_t seed = 0;
  // Probability that the next token is one of the current token's
  // favoured successors rather than a fresh draw. 0 gives an i.i.d.
  // stream, 1 a chain restricted to favoured successors.
  double concentration = 0.9;
  std::size_t branching = 4;
  // Fresh draws and favoured successors follow a Zipf law over content
  // tokens, rank r with weight (r + 1)^-zipf_exponent. 0 is uniform.
  double zipf_exponent = 1.0;

  void validate() const;
  std::size_t content_tokens() const { return vocab_size - kFirstContentToken; }
};

// Favoured successors of each content token and their probabilities.
struct TransitionTable {
  std::vector<std::vector<TokenId>> successors;  // indexed by token - kFirstContentToken
  std::vector<double> weights;                   // shared, sums to 1
};

TransitionTable build_transition_table(const SyntheticCorpusSpec& spec);

struct Corpus {
  std::size_t vocab_size = 0;
  std::size_t seq_len = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<TokenId>> sequences;

  bool operator==(const Corpus&) const = default;
};

// Sequences [first, first + count) of the stream defined by `spec`.
// Sequence i depends only on (spec, i), so held-out data is just a later
// index range.
Corpus generate_sequences(const SyntheticCorpusSpec& spec, std::uint64_t first,
                          std::uint64_t count);
inline Corpus generate_corpus(const SyntheticCorpusSpec& spec) {
  return generate_sequences(spec, 0, spec.examples);
}

// 0 through the SEP token, 1 after it.
std::vector<TokenId> token_types_for(std::span<const TokenId> sequence);

// ceil(rate * length), robust to rate * length landing a hair above an
// integer.
std::size_t masked_count(double rate, std::size_t length);

// Replaces masked_count(rate, L) distinct non-special positions, chosen
// uniformly, with [MASK]. DataError when too few positions are maskable.
MaskedExample apply_masking(std::span<const TokenId> sequence, double rate,
                            const RngStream& stream);

// Inverse of apply_masking.
std::vector<TokenId> unmask(const MaskedExample& example);

// Example i masked with stream (seed, 0, first_index + i, kMask).
std::vector<MaskedExample> mask_corpus(const Corpus& corpus, double rate, std::uint64_t seed,
                                       std::uint64_t first_index = 0);

enum class SamplingMode { kPoisson, kFixed };
std::string_view sampling_mode_name(SamplingMode mode);
SamplingMode parse_sampling_mode(std::string_view name);

// Poisson: every index kept independently with probability
// expected_batch / dataset_size. Fixed: exactly expected_batch distinct
// indices, uniformly. Indices come back ascending.
std::vector<std::uint64_t> sample_batch(std::uint64_t dataset_size, std::uint64_t expected_batch,
                                        SamplingMode mode, const RngStream& stream);
// Poisson with an explicit probability.
std::vector<std::uint64_t> sample_poisson(std::uint64_t dataset_size, double q,
                                          const RngStream& stream);

// Text export: header "dpbert-corpus <V> <L> <seed>", then one sequence per
// line as space-separated ids.
void write_corpus(std::ostream& out, const Corpus& corpus);
Corpus read_corpus(std::istream& in);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace dpbert

#endif  // DPBERT_DATA_HPP_
