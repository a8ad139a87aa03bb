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

// Cross-pattern disagreement and the log-probability gap.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mlmc/core.hpp"
#include "mlmc/provider.hpp"

namespace mlmc::metrics {

// Inclusive range of subset sizes m.
struct MRange {
  std::size_t lo = 2;
  std::size_t hi = 2;
};

// Parses "2..10" or a single number.
MRange parse_m_range(const std::string& text);

inline constexpr std::size_t kMaxPatterns = 16;

// Argmax of a present row, ties to the lowest candidate index.
std::size_t row_argmax(const ScoreRow& row);

// True iff the rows in `subset` do not all share one argmax.
bool instance_disagrees(const CandidateScores& scores, std::span<const std::size_t> subset);

struct DisagreementPoint {
  std::size_t m = 0;
  double rate = 0.0;
  std::uint64_t subsets = 0;    // C(P, m)
  std::size_t instances = 0;    // scored instances
  std::uint64_t skipped = 0;    // (subset, instance) pairs dropped for a skipped row
  std::uint64_t evaluated = 0;  // (subset, instance) pairs counted
  std::uint64_t disagreeing = 0;
};

struct DisagreementCurve {
  std::vector<DisagreementPoint> points;
  std::size_t errors = 0;  // instances that failed to score
};

// Exhaustive all-subsets aggregation over precomputed score matrices.
// Throws if the rate ever decreases with m while no pair was skipped (the
// only regime in which monotonicity is a theorem).
DisagreementCurve disagreement_curve(std::span<const ScoredInstance> instances,
                                     std::size_t num_patterns, MRange m_range);

DisagreementCurve disagreement_curve(std::span<const TaskInstance> tasks,
                                     const Provider& provider,
                                     std::span<const MaskPattern> patterns, MRange m_range,
                                     std::uint64_t seed, const ScoringOptions& options = {},
                                     std::size_t jobs = 1);

// Unweighted mean of per-file rates (macro average) for each m.
DisagreementCurve macro_average(std::span<const DisagreementCurve> curves);

// |log p_solved - log p_inferred|; both inputs must be positive.
double log_prob_gap(double p_solved, double p_inferred);

// Same gap for values already in log space.
double log_gap(double log_solved, double log_inferred);

// Bitmasks over `num_patterns` rows with exactly m bits set, ascending.
std::vector<std::uint32_t> subsets_of_size(std::size_t num_patterns, std::size_t m);

void check_m_range(MRange m_range, std::size_t num_patterns);

}  // namespace mlmc::metrics
