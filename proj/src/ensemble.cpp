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


#include "mlmc/ensemble.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

namespace mlmc::ensemble {

namespace {

EocPrediction max_pool(const CandidateScores& scores, std::span<const std::size_t> rows) {
  EocPrediction best;
  bool have = false;
  for (std::size_t i : rows) {
    const std::size_t j = metrics::row_argmax(scores.rows[i]);
    const double v = scores.rows[i].log_p[j];
    // Strict comparison keeps the lowest row on ties (rows arrive ascending).
    if (!have || v > best.log_p) {
      best = {i, j, v};
      have = true;
    }
  }
  return best;
}

EocPrediction average_pool(const CandidateScores& scores, std::span<const std::size_t> rows) {
  std::vector<double> mean(scores.num_candidates(), 0.0);
  for (std::size_t i : rows) {
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += std::exp(scores.rows[i].log_p[j]);
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < mean.size(); ++j) {
    if (mean[j] > mean[best]) best = j;
  }
  return {rows.front(), best, std::log(mean[best] / static_cast<double>(rows.size()))};
}

std::vector<std::size_t> sorted_rows(const CandidateScores& scores,
                                     std::span<const std::size_t> subset) {
  if (subset.empty()) throw InvalidArgument("subset must be nonempty");
  std::vector<std::size_t> rows(subset.begin(), subset.end());
  std::sort(rows.begin(), rows.end());
  for (std::size_t i : rows) {
    if (i >= scores.rows.size()) throw RangeError("row index out of range");
    if (scores.rows[i].skipped()) {
      throw InvalidArgument("subset includes skipped row " + scores.rows[i].pattern.name());
    }
  }
  return rows;
}

}  // namespace

EocPrediction eoc_predict(const CandidateScores& scores, std::span<const std::size_t> subset,
                          Pooling pooling) {
  const auto rows = sorted_rows(scores, subset);
  return pooling == Pooling::kMax ? max_pool(scores, rows) : average_pool(scores, rows);
}

std::optional<double> baseline_accuracy(std::span<const ScoredInstance> instances) {
  std::size_t correct = 0;
  std::size_t counted = 0;
  for (const auto& inst : instances) {
    if (!inst.scores) continue;
    const auto& rows = inst.scores->rows;
    auto it = std::find_if(rows.begin(), rows.end(), [](const ScoreRow& r) {
      return r.pattern.kind == MaskPattern::Kind::kBaseline;
    });
    if (it == rows.end() || it->skipped()) continue;
    ++counted;
    correct += metrics::row_argmax(*it) == inst.gold;
  }
  if (counted == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(counted);
}

AccuracyCurve eoc_accuracy_curve(std::span<const ScoredInstance> instances,
                                 std::size_t num_patterns, metrics::MRange m_range,
                                 Pooling pooling) {
  metrics::check_m_range(m_range, num_patterns);
  AccuracyCurve curve;
  std::vector<const ScoredInstance*> scored;
  std::vector<std::uint32_t> present;
  for (const auto& inst : instances) {
    if (!inst.scores) {
      ++curve.errors;
      continue;
    }
    if (inst.scores->rows.size() != num_patterns) {
      throw InvalidArgument("score matrix row count differs from pattern count");
    }
    std::uint32_t mask = 0;
    for (std::size_t i = 0; i < num_patterns; ++i) {
      if (!inst.scores->rows[i].skipped()) mask |= 1u << i;
    }
    scored.push_back(&inst);
    present.push_back(mask);
  }
  curve.baseline_accuracy = baseline_accuracy(instances);

  std::vector<std::size_t> rows;
  for (std::size_t m = m_range.lo; m <= m_range.hi; ++m) {
    AccuracyPoint pt;
    pt.m = m;
    pt.instances = scored.size();
    pt.min = std::numeric_limits<double>::infinity();
    pt.max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (std::uint32_t mask : metrics::subsets_of_size(num_patterns, m)) {
      rows.clear();
      for (std::size_t i = 0; i < num_patterns; ++i) {
        if (mask & (1u << i)) rows.push_back(i);
      }
      std::size_t correct = 0;
      std::size_t counted = 0;
      for (std::size_t k = 0; k < scored.size(); ++k) {
        if ((mask & ~present[k]) != 0) continue;
        ++counted;
        const auto pred = pooling == Pooling::kMax ? max_pool(*scored[k]->scores, rows)
                                                   : average_pool(*scored[k]->scores, rows);
        correct += pred.candidate == scored[k]->gold;
      }
      if (counted == 0) continue;
      const double acc = static_cast<double>(correct) / static_cast<double>(counted);
      pt.per_subset.push_back(acc);
      sum += acc;
      pt.min = std::min(pt.min, acc);
      pt.max = std::max(pt.max, acc);
    }
    pt.subsets = pt.per_subset.size();
    if (pt.subsets == 0) {
      pt.mean = pt.min = pt.max = 0.0;
    } else {
      pt.mean = sum / static_cast<double>(pt.subsets);
    }
    curve.points.push_back(std::move(pt));
  }
  return curve;
}

AccuracyCurve eoc_accuracy_curve(std::span<const TaskInstance> tasks, const Provider& provider,
                                 std::span<const MaskPattern> patterns, metrics::MRange m_range,
                                 std::uint64_t seed, const ScoringOptions& options,
                                 std::size_t jobs, Pooling pooling) {
  metrics::check_m_range(m_range, patterns.size());
  const auto scored = score_tasks(tasks, provider, patterns, seed, options, jobs);
  return eoc_accuracy_curve(scored, patterns.size(), m_range, pooling);
}

AccuracyCurve macro_average(std::span<const AccuracyCurve> curves) {
  AccuracyCurve out;
  if (curves.empty()) return out;
  out.points = curves.front().points;
  for (auto& pt : out.points) {
    pt.mean = pt.min = pt.max = 0.0;
    pt.instances = 0;
    pt.per_subset.clear();
  }
  double base_sum = 0.0;
  std::size_t base_n = 0;
  for (const auto& c : curves) {
    if (c.points.size() != out.points.size()) throw InvalidArgument("curves cover different m");
    out.errors += c.errors;
    if (c.baseline_accuracy) {
      base_sum += *c.baseline_accuracy;
      ++base_n;
    }
    for (std::size_t i = 0; i < c.points.size(); ++i) {
      out.points[i].mean += c.points[i].mean;
      out.points[i].min += c.points[i].min;
      out.points[i].max += c.points[i].max;
      out.points[i].instances += c.points[i].instances;
    }
  }
  const auto n = static_cast<double>(curves.size());
  for (auto& pt : out.points) {
    pt.mean /= n;
    pt.min /= n;
    pt.max /= n;
  }
  if (base_n) out.baseline_accuracy = base_sum / static_cast<double>(base_n);
  return out;
}

}  // namespace mlmc::ensemble
