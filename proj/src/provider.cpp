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


#include "mlmc/provider.hpp"

#include <cmath>
#include <limits>

#include "mlmc/parallel.hpp"
#include "mlmc/patterns.hpp"

namespace mlmc {

namespace {

std::size_t encoder_length(const MaskedQuery& query) {
  std::size_t n = 0;
  for (const auto& item : query.encoder) {
    n += item.is_slot && item.value != query.target_slot ? query.slots[item.value].width : 1;
  }
  return n;
}

void apply_options(std::vector<double>& row, std::span<const TokenSeq> candidates,
                   const ScoringOptions& options) {
  if (options.length_normalize) {
    for (std::size_t j = 0; j < row.size(); ++j) row[j] /= static_cast<double>(candidates[j].size());
  }
  if (options.renormalize_candidates) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double x : row) hi = std::max(hi, x);
    double sum = 0.0;
    for (double x : row) sum += std::exp(x - hi);
    const double log_z = hi + std::log(sum);
    for (double& x : row) x -= log_z;
  }
}

}  // namespace

std::vector<double> score_candidates(const Provider& provider, const MaskedQuery& query,
                                     std::span<const TokenSeq> candidates) {
  if (candidates.empty()) throw InvalidArgument("candidates must be nonempty");
  for (const auto& c : candidates) {
    if (c.empty()) throw InvalidArgument("candidate token sequences must be nonempty");
  }
  require_valid(validate(query), "MaskedQuery");
  const Capability cap = provider.capability();
  if (cap.max_context_length != 0 && encoder_length(query) > cap.max_context_length) {
    throw CapabilityExceeded("query longer than provider max context length " +
                             std::to_string(cap.max_context_length));
  }
  auto scores = provider.score_candidates(query, candidates);
  if (scores.size() != candidates.size()) {
    throw Error("provider returned " + std::to_string(scores.size()) + " scores for " +
                std::to_string(candidates.size()) + " candidates");
  }
  for (double s : scores) {
    if (std::isnan(s) || s == std::numeric_limits<double>::infinity()) {
      throw Error("provider returned a non-finite score");
    }
  }
  return scores;
}

CandidateScores score_matrix(const Provider& provider, const TokenSeq& context,
                             std::span<const MaskPattern> patterns,
                             std::span<const TokenSeq> candidates, std::uint64_t seed,
                             const ScoringOptions& options) {
  if (patterns.empty()) throw InvalidArgument("at least one pattern required");
  CandidateScores out;
  out.candidates.assign(candidates.begin(), candidates.end());
  std::size_t present = 0;
  for (const auto& pattern : patterns) {
    ScoreRow row;
    row.pattern = pattern;
    try {
      const auto query = patterns::apply_pattern(context, pattern, seed);
      row.log_p = score_candidates(provider, query, candidates);
    } catch (const patterns::PatternDoesNotFit& e) {
      row.skip_reason = e.what();
    }
    if (!row.skipped()) {
      for (double v : row.log_p) {
        if (!std::isfinite(v)) {
          row.skip_reason = "a candidate has zero probability under " + pattern.name();
          row.log_p.clear();
          break;
        }
      }
    }
    if (!row.skipped()) {
      apply_options(row.log_p, candidates, options);
      ++present;
    }
    out.rows.push_back(std::move(row));
  }
  if (present == 0) throw InvalidArgument("every pattern was inapplicable; empty score matrix");
  return out;
}

std::vector<ScoredInstance> score_tasks(std::span<const TaskInstance> tasks,
                                        const Provider& provider,
                                        std::span<const MaskPattern> patterns,
                                        std::uint64_t seed, const ScoringOptions& options,
                                        std::size_t jobs, SeedPolicy policy) {
  std::vector<ScoredInstance> out(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t i) {
    const TaskInstance& task = tasks[i];
    ScoredInstance& slot = out[i];
    slot.id = task.id;
    slot.gold = task.gold;
    const std::uint64_t s =
        policy == SeedPolicy::kPerTask ? patterns::task_seed(seed, task.id) : seed;
    try {
      require_valid(validate(task), "TaskInstance");
      slot.scores = score_matrix(provider, task.context, patterns, task.candidates, s, options);
    } catch (const std::exception& e) {
      slot.error = e.what();
    }
  });
  return out;
}

}  // namespace mlmc
