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


#include "mlmc/metrics.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

namespace mlmc::metrics {

MRange parse_m_range(const std::string& text) {
  MRange r;
  try {
    const auto dots = text.find("..");
    if (dots == std::string::npos) {
      r.lo = r.hi = std::stoul(text);
    } else {
      r.lo = std::stoul(text.substr(0, dots));
      r.hi = std::stoul(text.substr(dots + 2));
    }
  } catch (const std::logic_error&) {
    throw InvalidArgument("bad m range \"" + text + "\"; expected e.g. 2..10");
  }
  if (r.lo < 1 || r.lo > r.hi) throw InvalidArgument("bad m range \"" + text + "\"");
  return r;
}

void check_m_range(MRange m_range, std::size_t num_patterns) {
  if (num_patterns == 0 || num_patterns > kMaxPatterns) {
    throw InvalidArgument("pattern count must lie in [1, 16] for exhaustive enumeration");
  }
  if (m_range.lo < 1 || m_range.lo > m_range.hi || m_range.hi > num_patterns) {
    throw InvalidArgument("m range must lie within [1, " + std::to_string(num_patterns) + "]");
  }
}

std::size_t row_argmax(const ScoreRow& row) {
  if (row.skipped() || row.log_p.empty()) throw InvalidArgument("argmax of a skipped row");
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.log_p.size(); ++j) {
    if (row.log_p[j] > row.log_p[best]) best = j;
  }
  return best;
}

bool instance_disagrees(const CandidateScores& scores, std::span<const std::size_t> subset) {
  if (subset.empty()) throw InvalidArgument("subset must be nonempty");
  std::size_t first = 0;
  for (std::size_t k = 0; k < subset.size(); ++k) {
    const std::size_t i = subset[k];
    if (i >= scores.rows.size()) throw RangeError("row index out of range");
    if (scores.rows[i].skipped()) {
      throw InvalidArgument("subset includes skipped row " + scores.rows[i].pattern.name());
    }
    const std::size_t a = row_argmax(scores.rows[i]);
    if (k == 0) {
      first = a;
    } else if (a != first) {
      return true;
    }
  }
  return false;
}

std::vector<std::uint32_t> subsets_of_size(std::size_t num_patterns, std::size_t m) {
  std::vector<std::uint32_t> out;
  const std::uint32_t end = 1u << num_patterns;
  for (std::uint32_t mask = 1; mask < end; ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) == m) out.push_back(mask);
  }
  return out;
}

DisagreementCurve disagreement_curve(std::span<const ScoredInstance> instances,
                                     std::size_t num_patterns, MRange m_range) {
  check_m_range(m_range, num_patterns);

  // Per instance: which rows are present, and for each candidate the set of
  // rows voting for it. A subset agrees iff it sits inside one voting set.
  struct Votes {
    std::uint32_t present = 0;
    std::vector<std::uint32_t> by_candidate;
  };
  std::vector<Votes> votes;
  DisagreementCurve curve;
  for (const auto& inst : instances) {
    if (!inst.scores) {
      ++curve.errors;
      continue;
    }
    if (inst.scores->rows.size() != num_patterns) {
      throw InvalidArgument("score matrix row count differs from pattern count");
    }
    Votes v;
    v.by_candidate.assign(inst.scores->num_candidates(), 0);
    for (std::size_t i = 0; i < num_patterns; ++i) {
      const auto& row = inst.scores->rows[i];
      if (row.skipped()) continue;
      v.present |= 1u << i;
      v.by_candidate[row_argmax(row)] |= 1u << i;
    }
    votes.push_back(std::move(v));
  }

  for (std::size_t m = m_range.lo; m <= m_range.hi; ++m) {
    DisagreementPoint pt;
    pt.m = m;
    pt.instances = votes.size();
    const auto subsets = subsets_of_size(num_patterns, m);
    pt.subsets = subsets.size();
    for (const auto& v : votes) {
      for (std::uint32_t mask : subsets) {
        if ((mask & ~v.present) != 0) {
          ++pt.skipped;
          continue;
        }
        ++pt.evaluated;
        bool agree = false;
        for (std::uint32_t voters : v.by_candidate) {
          if ((mask & ~voters) == 0) {
            agree = true;
            break;
          }
        }
        pt.disagreeing += !agree;
      }
    }
    pt.rate = pt.evaluated ? static_cast<double>(pt.disagreeing) / static_cast<double>(pt.evaluated)
                           : 0.0;
    curve.points.push_back(pt);
  }

  bool any_skipped = false;
  for (const auto& pt : curve.points) any_skipped |= pt.skipped != 0;
  for (std::size_t i = 1; i < curve.points.size() && !any_skipped; ++i) {
    if (curve.points[i].rate < curve.points[i - 1].rate) {
      throw std::logic_error("disagreement decreased from m=" +
                             std::to_string(curve.points[i - 1].m) + " to m=" +
                             std::to_string(curve.points[i].m));
    }
  }
  for (const auto& pt : curve.points) {
    if (pt.rate < 0.0 || pt.rate > 1.0) throw std::logic_error("disagreement rate outside [0,1]");
  }
  return curve;
}

DisagreementCurve disagreement_curve(std::span<const TaskInstance> tasks,
                                     const Provider& provider,
                                     std::span<const MaskPattern> patterns, MRange m_range,
                                     std::uint64_t seed, const ScoringOptions& options,
                                     std::size_t jobs) {
  check_m_range(m_range, patterns.size());
  const auto scored = score_tasks(tasks, provider, patterns, seed, options, jobs);
  return disagreement_curve(scored, patterns.size(), m_range);
}

DisagreementCurve macro_average(std::span<const DisagreementCurve> curves) {
  DisagreementCurve out;
  if (curves.empty()) return out;
  out.points = curves.front().points;
  for (auto& pt : out.points) {
    pt.rate = 0.0;
    pt.instances = 0;
    pt.skipped = pt.evaluated = pt.disagreeing = 0;
  }
  for (const auto& c : curves) {
    if (c.points.size() != out.points.size()) throw InvalidArgument("curves cover different m");
    out.errors += c.errors;
    for (std::size_t i = 0; i < c.points.size(); ++i) {
      out.points[i].rate += c.points[i].rate;
      out.points[i].instances += c.points[i].instances;
      out.points[i].skipped += c.points[i].skipped;
      out.points[i].evaluated += c.points[i].evaluated;
      out.points[i].disagreeing += c.points[i].disagreeing;
    }
  }
  for (auto& pt : out.points) pt.rate /= static_cast<double>(curves.size());
  return out;
}

double log_prob_gap(double p_solved, double p_inferred) {
  if (!(p_solved > 0.0) || !(p_inferred > 0.0)) {
    throw InvalidArgument("log_prob_gap requires positive probabilities");
  }
  return std::abs(std::log(p_solved) - std::log(p_inferred));
}

double log_gap(double log_solved, double log_inferred) {
  return std::abs(log_solved - log_inferred);
}

}  // namespace mlmc::metrics
