// Copyright 2026 The mlmc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

// Bigram-quadruple compatibility check. For four bigrams {x11,x12}x{x21,x22}
// in a shared context, eight conditionals are read from a provider; any one
// of them is then reconstructed from the other seven through the cross-ratio
// identity and compared with what the provider said.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlmc/core.hpp"
#include "mlmc/provider.hpp"

namespace mlmc::bigram {

// Values below this are treated as zero mass; such quadruples are skipped.
inline constexpr double kDegenerateThreshold = 1e-12;

enum class ExtractionMode {
  // Fix one position to the conditioning token, mask only the other.
  kSingleMask,
  // Mask both positions and read the target position's distribution; the
  // other position stays masked, so the value ignores the conditioning token.
  kBothMasked,
};

struct InferOptions {
  ExtractionMode mode = ExtractionMode::kSingleMask;
  // Renormalize each pair p(x·1|c), p(x·2|c) to sum to 1.
  bool pairwise_normalize = false;
};

struct Inference {
  std::optional<EightConditionals> values;
  std::optional<std::string> skip_reason;
};

Inference infer_eight(const Provider& provider, const BigramQuadruple& quad,
                      const InferOptions& options = {});

// Reconstructs conditional `index` from the other seven. The result may
// exceed 1 for inconsistent inputs. Throws DegenerateQuadruple if any of the
// seven is not positive.
double solve_one(const EightConditionals& inferred, std::size_t index);

struct QuadrupleResult {
  BigramQuadruple quad;
  std::optional<EightConditionals> inferred;
  std::optional<EightConditionals> solved;
  std::optional<EightConditionals> gaps;
  std::optional<std::string> skip_reason;

  double mean_gap() const;
};

// Uses quad.inferred when present, otherwise queries the provider.
QuadrupleResult evaluate_quadruple(const Provider& provider, const BigramQuadruple& quad,
                                   const InferOptions& options = {});

struct BigramStats {
  double mean = 0.0;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  std::size_t n = 0;
  std::size_t skipped = 0;
  double first_only_mean = 0.0;  // gap of index 0 only
  std::vector<QuadrupleResult> results;
};

// Throws InvalidArgument when no quadruple is evaluable.
BigramStats quadruple_stats(std::span<const BigramQuadruple> quads, const Provider& provider,
                            const InferOptions& options = {}, std::size_t jobs = 1);

nlohmann::ordered_json to_json(const BigramStats& stats);

// Linear-interpolation quantile of sorted data, q in [0, 1].
double quantile_sorted(std::span<const double> sorted, double q);

// Proposes two-token fillers for the bigram at (slot, slot + 1).
class AlternativeBigramSource {
 public:
  virtual ~AlternativeBigramSource() = default;
  virtual std::vector<std::pair<TokenId, TokenId>> propose(const TokenSeq& sequence,
                                                           std::size_t slot) const = 0;
};

// Fixed proposals per (sequence content, slot).
class TableBigramSource : public AlternativeBigramSource {
 public:
  void add(const TokenSeq& sequence, std::size_t slot,
           std::vector<std::pair<TokenId, TokenId>> proposals);
  std::vector<std::pair<TokenId, TokenId>> propose(const TokenSeq& sequence,
                                                   std::size_t slot) const override;

 private:
  std::map<std::pair<TokenSeq, std::size_t>, std::vector<std::pair<TokenId, TokenId>>> table_;
};

// Every bigram observed anywhere in a corpus, regardless of position.
class CorpusBigramSource : public AlternativeBigramSource {
 public:
  explicit CorpusBigramSource(std::span<const TokenSeq> corpus);
  std::vector<std::pair<TokenId, TokenId>> propose(const TokenSeq& sequence,
                                                   std::size_t slot) const override;

 private:
  std::vector<std::pair<TokenId, TokenId>> bigrams_;
};

// The `beam` most probable two-token fillers of a single two-wide slot under
// a provider (needs the provider's vocabulary size).
class TopBigramSource : public AlternativeBigramSource {
 public:
  TopBigramSource(const Provider& provider, std::size_t beam);
  std::vector<std::pair<TokenId, TokenId>> propose(const TokenSeq& sequence,
                                                   std::size_t slot) const override;

 private:
  const Provider& provider_;
  std::size_t beam_;
  std::size_t vocab_size_;
};

// Sweeps every adjacent position pair. The original bigram is always part of
// the quadruple; one is emitted when the proposals (plus the original) cover
// all four combinations for some x12 != x11, x22 != x21. When several fit,
// one is picked with the seed.
std::vector<BigramQuadruple> generate_quadruples(std::span<const TokenSeq> corpus,
                                                 const AlternativeBigramSource& generator,
                                                 std::size_t max, std::uint64_t seed);

}  // namespace mlmc::bigram
