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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlmc/core.hpp"

namespace mlmc {

struct Capability {
  std::size_t max_context_length = 0;
  bool multi_token_candidates = true;
  bool deterministic = true;
  // Known for local providers; remote servers may not report it.
  std::optional<std::size_t> vocab_size;
};

class CapabilityExceeded : public Error {
 public:
  using Error::Error;
};

// Anything that answers masked queries with candidate log-probabilities.
// Implementations are immutable after construction and must tolerate
// concurrent score_candidates calls.
class Provider {
 public:
  virtual ~Provider() = default;

  virtual Capability capability() const = 0;

  // Entry j is log p(candidate j fills the target slot), accumulated by
  // forced stepwise decoding. Not renormalized over the candidate set.
  // Impossible candidates score -infinity.
  virtual std::vector<double> score_candidates(const MaskedQuery& query,
                                               std::span<const TokenSeq> candidates) const = 0;
};

struct ScoringOptions {
  // Divide each candidate's log-probability by its token count.
  bool length_normalize = false;
  // Renormalize scores over the candidate set before pooling.
  bool renormalize_candidates = false;
};

// Checks preconditions, calls the provider and rejects malformed responses.
std::vector<double> score_candidates(const Provider& provider, const MaskedQuery& query,
                                     std::span<const TokenSeq> candidates);

// Applies every pattern to the context and scores all candidates under it.
// Patterns that do not fit become skipped rows; so do rows where a candidate
// has zero mass. Throws InvalidArgument when every pattern is skipped.
CandidateScores score_matrix(const Provider& provider, const TokenSeq& context,
                             std::span<const MaskPattern> patterns,
                             std::span<const TokenSeq> candidates, std::uint64_t seed,
                             const ScoringOptions& options = {});

enum class SeedPolicy {
  kPerTask,  // span placement reseeded per task (run seed mixed with task id)
  kFixed,    // one placement seed for the whole dataset
};

// A task together with its score matrix, or the error that prevented scoring.
struct ScoredInstance {
  std::string id;
  std::size_t gold = 0;
  std::optional<CandidateScores> scores;
  std::optional<std::string> error;
};

// Scores every task under every pattern, fanning out over `jobs` threads.
// Per-instance failures are recorded, not thrown.
std::vector<ScoredInstance> score_tasks(std::span<const TaskInstance> tasks,
                                        const Provider& provider,
                                        std::span<const MaskPattern> patterns,
                                        std::uint64_t seed, const ScoringOptions& options = {},
                                        std::size_t jobs = 1,
                                        SeedPolicy policy = SeedPolicy::kPerTask);

}  // namespace mlmc
