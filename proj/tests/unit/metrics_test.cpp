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


#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>

#include "mlmc/harness.hpp"
#include "mlmc/metrics.hpp"
#include "mlmc/oracle.hpp"
#include "mlmc/patterns.hpp"

using namespace mlmc;
using namespace mlmc::metrics;

namespace {

ScoreRow linear_row(std::vector<double> probs) {
  ScoreRow r;
  for (double p : probs) r.log_p.push_back(std::log(p));
  return r;
}

ScoreRow skipped_row() {
  ScoreRow r;
  r.skip_reason = "does not fit";
  return r;
}

// Random score matrices with small integer scores so argmax ties occur.
std::vector<ScoredInstance> random_instances(std::size_t count, std::size_t rows,
                                             std::size_t cands, std::uint64_t seed,
                                             double skip_rate = 0.0) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<int> score(-3, 0);
  std::bernoulli_distribution skip(skip_rate);
  std::vector<ScoredInstance> out(count);
  for (auto& inst : out) {
    CandidateScores s;
    s.candidates.resize(cands, TokenSeq{0});
    for (std::size_t i = 0; i < rows; ++i) {
      if (skip(gen)) {
        s.rows.push_back(skipped_row());
        continue;
      }
      ScoreRow r;
      for (std::size_t j = 0; j < cands; ++j) r.log_p.push_back(score(gen));
      s.rows.push_back(r);
    }
    inst.scores = s;
  }
  return out;
}

// Direct reading of the definition: for each subset of size m, count
// instances whose included rows do not share one argmax.
double reference_rate(const std::vector<ScoredInstance>& insts, std::size_t rows, std::size_t m) {
  std::size_t evaluated = 0, disagree = 0;
  for (std::uint32_t mask = 0; mask < (1u << rows); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != m) continue;
    for (const auto& inst : insts) {
      std::vector<std::size_t> votes;
      bool missing = false;
      for (std::size_t i = 0; i < rows; ++i) {
        if (!(mask & (1u << i))) continue;
        const auto& r = inst.scores->rows[i];
        if (r.skipped()) {
          missing = true;
          break;
        }
        std::size_t best = 0;
        for (std::size_t j = 0; j < r.log_p.size(); ++j) {
          if (r.log_p[j] > r.log_p[best]) best = j;
        }
        votes.push_back(best);
      }
      if (missing) continue;
      ++evaluated;
      for (std::size_t v : votes) {
        if (v != votes[0]) {
          ++disagree;
          break;
        }
      }
    }
  }
  return evaluated ? static_cast<double>(disagree) / static_cast<double>(evaluated) : 0.0;
}

}  // namespace

TEST(InstanceDisagrees, Examples) {
  CandidateScores s{{{0}, {1}}, {linear_row({0.5, 0.3}), linear_row({0.2, 0.6}),
                                 linear_row({0.5, 0.3}), skipped_row()}};
  const std::vector<std::size_t> one{0}, pair{0, 1}, same{0, 2}, with_skip{0, 3};
  EXPECT_FALSE(instance_disagrees(s, one));
  EXPECT_TRUE(instance_disagrees(s, pair));
  EXPECT_FALSE(instance_disagrees(s, same));
  EXPECT_THROW(instance_disagrees(s, with_skip), InvalidArgument);
  EXPECT_THROW(instance_disagrees(s, std::vector<std::size_t>{}), InvalidArgument);
}

TEST(RowArgmax, TiesToLowestIndex) {
  EXPECT_EQ(row_argmax(linear_row({0.3, 0.3, 0.4, 0.4})), 2u);
  EXPECT_EQ(row_argmax(linear_row({0.5, 0.5})), 0u);
}

TEST(LogProbGap, Examples) {
  EXPECT_EQ(log_prob_gap(0.5, 0.5), 0.0);
  EXPECT_NEAR(log_prob_gap(std::exp(1.0) * 0.2, 0.2), 1.0, 1e-12);
  EXPECT_NEAR(log_prob_gap(1.3, 0.6), 0.7732, 1e-4);
  EXPECT_THROW(log_prob_gap(0.0, 0.5), InvalidArgument);
  EXPECT_THROW(log_prob_gap(0.5, -1.0), InvalidArgument);
}

TEST(LogProbGap, ScaleInvariant) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(1e-3, 2.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(gen), b = u(gen), c = u(gen);
    EXPECT_NEAR(log_prob_gap(c * a, c * b), log_prob_gap(a, b), 1e-12);
  }
}

TEST(MRangeParse, Forms) {
  EXPECT_EQ(parse_m_range("2..10").hi, 10u);
  EXPECT_EQ(parse_m_range("3").lo, 3u);
  EXPECT_THROW(parse_m_range("5..2"), InvalidArgument);
  EXPECT_THROW(parse_m_range("x"), InvalidArgument);
  EXPECT_THROW(check_m_range({2, 11}, 10), InvalidArgument);
  EXPECT_THROW(check_m_range({1, 1}, 17), InvalidArgument);
}

TEST(DisagreementCurve, MatchesDefinition) {
  const auto insts = random_instances(60, 6, 3, 11);
  const auto curve = disagreement_curve(insts, 6, {1, 6});
  ASSERT_EQ(curve.points.size(), 6u);
  EXPECT_EQ(curve.points[0].rate, 0.0);
  for (const auto& pt : curve.points) {
    EXPECT_NEAR(pt.rate, reference_rate(insts, 6, pt.m), 1e-15) << pt.m;
    EXPECT_EQ(pt.instances, 60u);
  }
  EXPECT_EQ(curve.points[2].subsets, 20u);
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    EXPECT_GE(curve.points[i].rate, curve.points[i - 1].rate);
  }
}

TEST(DisagreementCurve, SkippedRowsLeaveTheDenominator) {
  const auto insts = random_instances(80, 5, 3, 12, 0.2);
  const auto curve = disagreement_curve(insts, 5, {2, 5});
  for (const auto& pt : curve.points) {
    EXPECT_NEAR(pt.rate, reference_rate(insts, 5, pt.m), 1e-15) << pt.m;
    EXPECT_EQ(pt.evaluated + pt.skipped, pt.subsets * 80);
  }
}

TEST(DisagreementCurve, FullSetIsFractionNotUnanimous) {
  const auto insts = random_instances(50, 4, 2, 13);
  std::size_t split = 0;
  for (const auto& inst : insts) {
    const std::vector<std::size_t> all{0, 1, 2, 3};
    split += instance_disagrees(*inst.scores, all);
  }
  const auto curve = disagreement_curve(insts, 4, {4, 4});
  EXPECT_DOUBLE_EQ(curve.points[0].rate, static_cast<double>(split) / 50.0);
}

TEST(DisagreementCurve, ErrorsCounted) {
  auto insts = random_instances(10, 3, 2, 14);
  insts[2].scores.reset();
  insts[2].error = "boom";
  const auto curve = disagreement_curve(insts, 3, {2, 3});
  EXPECT_EQ(curve.errors, 1u);
  EXPECT_EQ(curve.points[0].instances, 9u);
}

TEST(DisagreementCurve, ConsistentProviderZero) {
  auto joint = std::make_shared<const oracle::JointTable>(
      oracle::random_joint(Vocabulary::of_size(3), 6, 21));
  const auto tasks = harness::synth_tasks(joint, 50, 3, 1);
  const auto provider = oracle::consistent_provider(joint);
  const auto pats = patterns::desk_patterns();
  const auto curve = disagreement_curve(tasks, *provider, pats, {2, 10}, 0);
  for (const auto& pt : curve.points) EXPECT_EQ(pt.rate, 0.0);
}

TEST(DisagreementCurve, PerturbedNonDecreasing) {
  auto joint = std::make_shared<const oracle::JointTable>(
      oracle::random_joint(Vocabulary::of_size(4), 6, 22));
  const auto tasks = harness::synth_tasks(joint, 500, 4, 2);
  const auto provider = oracle::perturbed_provider(joint, {1.0, 5});
  const auto pats = patterns::desk_patterns();
  const auto curve = disagreement_curve(tasks, *provider, pats, {2, 10}, 0, {}, 4);
  EXPECT_GT(curve.points.back().rate, 0.0);
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    EXPECT_GE(curve.points[i].rate, curve.points[i - 1].rate);
  }
}

TEST(DisagreementCurve, MacroAverage) {
  const auto a = disagreement_curve(random_instances(20, 3, 2, 1), 3, {2, 3});
  const auto b = disagreement_curve(random_instances(40, 3, 2, 2), 3, {2, 3});
  const std::vector<DisagreementCurve> both{a, b};
  const auto macro = macro_average(both);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(macro.points[i].rate, (a.points[i].rate + b.points[i].rate) / 2);
    EXPECT_EQ(macro.points[i].instances, 60u);
  }
}
