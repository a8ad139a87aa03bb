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

#include <algorithm>
#include <random>

#include "mlmc/core.hpp"
#include "mlmc/patterns.hpp"

using namespace mlmc;
using nlohmann::json;

namespace {

bool has_rule(const Violations& v, const std::string& rule) {
  return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.rule == rule; });
}

template <typename T>
T round_trip(const T& value) {
  return json::parse(json(value).dump()).get<T>();
}

}  // namespace

TEST(Vocabulary, DuplicateTokenViolation) {
  EXPECT_TRUE(has_rule(validate(Vocabulary({"a", "b", "a"})), "tokens distinct"));
  EXPECT_THROW(Vocabulary::create({"a", "a"}), InvalidArgument);
}

TEST(Vocabulary, NeedsTwoTokens) {
  EXPECT_TRUE(has_rule(validate(Vocabulary({"a"})), "|V| >= 2"));
  EXPECT_TRUE(validate(Vocabulary::of_size(2)).empty());
  EXPECT_EQ(Vocabulary::of_size(3).token(2), "t2");
}

TEST(TokenSeq, IdsBelowVocabulary) {
  EXPECT_TRUE(validate(TokenSeq{0, 1, 2}, 3).empty());
  EXPECT_TRUE(has_rule(validate(TokenSeq{0, 3}, 3), "id < |V|"));
  EXPECT_TRUE(has_rule(validate(TokenSeq{}, 3), "L >= 1"));
}

TEST(MaskPattern, ParameterBounds) {
  EXPECT_TRUE(validate(MaskPattern::baseline()).empty());
  EXPECT_FALSE(validate(MaskPattern{MaskPattern::Kind::kKOffset, 0}).empty());
  EXPECT_FALSE(validate(MaskPattern{MaskPattern::Kind::kMultimask, 0, 0, 1, -1}).empty());
  EXPECT_TRUE(validate(MaskPattern::multimask(1, 1, 0)).empty());
  EXPECT_EQ(MaskPattern::multimask(3, 5, 1).name(), "multimask(3,5,1)");
  EXPECT_EQ(MaskPattern::koffset(3).name(), "koffset(3)");
}

TEST(TaskInstance, WellFormedIsValid) {
  TaskInstance t{"q1", {1, 2, 3}, {{0}, {1}, {2}, {3}}, 2};
  EXPECT_TRUE(validate(t).empty());
}

TEST(TaskInstance, Violations) {
  TaskInstance t{"q1", {1}, {{0}}, 3};
  const auto v = validate(t);
  EXPECT_TRUE(has_rule(v, ">= 2 candidates"));
  EXPECT_TRUE(has_rule(v, "gold in range"));
  TaskInstance empty_candidate{"q2", {1}, {{0}, {}}, 0};
  EXPECT_TRUE(has_rule(validate(empty_candidate), "candidate token sequences nonempty"));
}

TEST(BigramQuadruple, ZeroConditionalViolation) {
  BigramQuadruple q{{0, 1, 2}, 0, 0, 1, 1, 2, EightConditionals{}};
  q.inferred->fill(0.5);
  EXPECT_TRUE(validate(q).empty());
  (*q.inferred)[3] = 0.0;
  EXPECT_TRUE(has_rule(validate(q), "in (0,1]"));
  (*q.inferred)[3] = 1.5;
  EXPECT_TRUE(has_rule(validate(q), "in (0,1]"));
}

TEST(BigramQuadruple, DistinctAlternativesAndAdjacentSlot) {
  EXPECT_FALSE(validate(BigramQuadruple{{0, 1}, 0, 0, 0, 1, 2}).empty());
  EXPECT_FALSE(validate(BigramQuadruple{{0, 1}, 1, 0, 1, 1, 2}).empty());
  EXPECT_THROW(make_quadruple({0, 1}, 0, 0, 1, 1, 1), InvalidArgument);
}

TEST(CandidateScores, FiniteAndShaped) {
  CandidateScores s{{{0}, {1}}, {ScoreRow{MaskPattern::baseline(), {}, {-0.1, -2.0}}}};
  EXPECT_TRUE(validate(s).empty());
  s.rows[0].log_p[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_TRUE(has_rule(validate(s), "every entry finite"));
  s.rows[0].log_p = {-0.1};
  EXPECT_FALSE(validate(s).empty());
  s.rows[0].log_p = {0.5, -1.0};
  EXPECT_TRUE(has_rule(validate(s, true), "entries <= 0"));
  EXPECT_TRUE(validate(s, false).empty());
}

TEST(MaskedQuery, TargetSlotMustExist) {
  MaskedQuery q;
  q.encoder = {EncoderItem::token(1), EncoderItem::slot(0)};
  q.slots = {Slot{}};
  EXPECT_TRUE(validate(q).empty());
  q.target_slot = 1;
  EXPECT_FALSE(validate(q).empty());
}

// Checked constructors accept exactly what validate accepts.
TEST(CheckedConstructors, AgreeWithValidate) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 500; ++trial) {
    TaskInstance t;
    t.id = "t" + std::to_string(trial);
    t.context.resize(gen() % 3);
    for (auto& x : t.context) x = gen() % 5;
    t.candidates.resize(gen() % 4);
    for (auto& c : t.candidates) {
      c.resize(gen() % 3);
      for (auto& x : c) x = gen() % 5;
    }
    t.gold = gen() % 5;
    const bool valid = validate(t).empty();
    bool constructed = true;
    try {
      make_task(t.id, t.context, t.candidates, t.gold);
    } catch (const InvalidArgument&) {
      constructed = false;
    }
    EXPECT_EQ(valid, constructed);

    BigramQuadruple q{TokenSeq(1 + gen() % 4), gen() % 4, static_cast<TokenId>(gen() % 3),
                      static_cast<TokenId>(gen() % 3), static_cast<TokenId>(gen() % 3),
                      static_cast<TokenId>(gen() % 3)};
    bool qconstructed = true;
    try {
      make_quadruple(q.context, q.slot, q.x11, q.x12, q.x21, q.x22);
    } catch (const InvalidArgument&) {
      qconstructed = false;
    }
    EXPECT_EQ(validate(q).empty(), qconstructed);
  }
}

TEST(Serialization, TaskSchemaFields) {
  const TaskInstance t{"q", {4, 5}, {{1, 2}, {3}}, 1};
  const json j = t;
  EXPECT_EQ(j.at("id"), "q");
  EXPECT_EQ(j.at("context"), json({4, 5}));
  EXPECT_EQ(j.at("candidates"), json({{1, 2}, {3}}));
  EXPECT_EQ(j.at("gold"), 1);
}

TEST(Serialization, QuadrupleInferredOptional) {
  const auto q = json::parse(R"({"context":[0,1,2],"slot":1,"x11":1,"x12":0,"x21":2,"x22":0})")
                     .get<BigramQuadruple>();
  EXPECT_FALSE(q.inferred.has_value());
  EXPECT_EQ(q.slot, 1u);
  EXPECT_FALSE(json(q).contains("inferred"));
  EXPECT_THROW(json::parse(R"({"context":[0],"slot":0})").get<BigramQuadruple>(),
               InvalidArgument);
}

TEST(Serialization, PatternSchema) {
  EXPECT_EQ(json(MaskPattern::koffset(3)), json::parse(R"({"variant":"koffset","k":3})"));
  EXPECT_EQ(json::parse(R"({"variant":"multimask","n":3,"s":5,"g":1})").get<MaskPattern>(),
            MaskPattern::multimask(3, 5, 1));
  EXPECT_EQ(json::parse(R"({"variant":"baseline"})").get<MaskPattern>(), MaskPattern::baseline());
  EXPECT_THROW(json::parse(R"({"variant":"other"})").get<MaskPattern>(), InvalidArgument);
}

TEST(Serialization, RandomizedRoundTrip) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(1e-6, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    TaskInstance t{"id-" + std::to_string(gen()), {}, {}, 0};
    t.context.resize(1 + gen() % 6);
    for (auto& x : t.context) x = gen() % 1000;
    t.candidates.resize(2 + gen() % 3);
    for (auto& c : t.candidates) c.assign(1 + gen() % 3, static_cast<TokenId>(gen() % 1000));
    t.gold = gen() % t.candidates.size();
    EXPECT_EQ(round_trip(t), t);

    BigramQuadruple q = make_quadruple({1, 2, 3, 4}, gen() % 3, 1, 2, 3, 4);
    if (gen() % 2) {
      EightConditionals e;
      for (double& x : e) x = u(gen);
      q.inferred = e;
    }
    EXPECT_EQ(round_trip(q), q);

    const MaskPattern patterns[] = {MaskPattern::baseline(),
                                    MaskPattern::koffset(1 + gen() % 6),
                                    MaskPattern::multimask(1 + gen() % 3, 1 + gen() % 4,
                                                           static_cast<int>(gen() % 3))};
    for (const auto& p : patterns) EXPECT_EQ(round_trip(p), p);

    TokenSeq ctx(20);
    for (auto& x : ctx) x = gen() % 50;
    const auto query = patterns::apply_pattern(ctx, patterns[gen() % 3], gen());
    EXPECT_EQ(round_trip(query), query);

    CandidateScores s{{{1}, {2, 3}}, {}};
    s.rows.push_back(ScoreRow{MaskPattern::baseline(), {}, {-u(gen), -u(gen)}});
    s.rows.push_back(ScoreRow{MaskPattern::koffset(9), "does not fit", {}});
    EXPECT_EQ(round_trip(s), s);

    const auto vocab = Vocabulary::of_size(2 + gen() % 5);
    EXPECT_EQ(round_trip(vocab), vocab);
  }
}

TEST(MaskedQuery, DecoderPrefixCollectsFilledSlotsBeforeTarget) {
  MaskedQuery q;
  q.encoder = {EncoderItem::token(7), EncoderItem::slot(0), EncoderItem::token(8),
               EncoderItem::slot(1), EncoderItem::slot(2)};
  q.slots = {Slot{{1, 2}, 2}, Slot{{}, 1}, Slot{}};
  q.target_slot = 2;
  EXPECT_TRUE(validate(q).empty());
  EXPECT_EQ(q.decoder_prefix(), (TokenSeq{1, 2}));
}
