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

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace mlmc {

using TokenId = std::uint32_t;

// Error hierarchy shared by every module.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ZeroMassError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

// A quadruple whose conditionals include a zero (or sub-threshold) value.
class DegenerateQuadruple : public Error {
 public:
  using Error::Error;
};

struct Violation {
  std::string field;
  std::string rule;

  bool operator==(const Violation&) const = default;
};

using Violations = std::vector<Violation>;

std::string describe(const Violations& violations);

// Throws InvalidArgument listing every violation, if any.
void require_valid(const Violations& violations, const std::string& what);

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {}

  // Checked constructor.
  static Vocabulary create(std::vector<std::string> tokens);
  // "t0", "t1", ... of the given size.
  static Vocabulary of_size(std::size_t size);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> tokens_;
};

using TokenSeq = std::vector<TokenId>;

struct MaskPattern {
  enum class Kind { kBaseline, kKOffset, kMultimask };

  Kind kind = Kind::kBaseline;
  int k = 0;  // KOffset
  int n = 0;  // Multimask span count
  int s = 0;  // Multimask span length
  int g = 0;  // Multimask minimum gap

  static MaskPattern baseline() { return {}; }
  static MaskPattern koffset(int k);
  static MaskPattern multimask(int n, int s, int g);

  // "baseline", "koffset(3)", "multimask(3,5,1)".
  std::string name() const;

  bool operator==(const MaskPattern&) const = default;
};

// One item of the encoder input: either a visible token or a sentinel slot.
struct EncoderItem {
  bool is_slot = false;
  std::uint32_t value = 0;  // token id, or slot index when is_slot

  static EncoderItem token(TokenId id) { return {false, id}; }
  static EncoderItem slot(std::uint32_t index) { return {true, index}; }

  bool operator==(const EncoderItem&) const = default;
};

// A sentinel region. Filled slots carry their original tokens (the "given
// output" fed to the decoder); hidden slots have a width but no tokens and
// stand for positions the model must marginalize over. The target slot has
// neither: its width is the candidate length.
struct Slot {
  std::vector<TokenId> given;
  std::size_t width = 0;

  bool filled() const { return !given.empty(); }
  bool operator==(const Slot&) const = default;
};

struct MaskedQuery {
  MaskPattern pattern;
  std::vector<EncoderItem> encoder;
  std::vector<Slot> slots;
  std::size_t target_slot = 0;

  // Tokens of the filled slots preceding the target, in slot order.
  TokenSeq decoder_prefix() const;

  bool operator==(const MaskedQuery&) const = default;
};

// One row of the p_ij matrix. Skipped rows carry a reason and no scores.
struct ScoreRow {
  MaskPattern pattern;
  std::optional<std::string> skip_reason;
  std::vector<double> log_p;

  bool skipped() const { return skip_reason.has_value(); }
  bool operator==(const ScoreRow&) const = default;
};

struct CandidateScores {
  std::vector<TokenSeq> candidates;
  std::vector<ScoreRow> rows;

  std::size_t num_rows() const { return rows.size(); }
  std::size_t num_candidates() const { return candidates.size(); }
  bool operator==(const CandidateScores&) const = default;
};

struct TaskInstance {
  std::string id;
  TokenSeq context;
  std::vector<TokenSeq> candidates;
  std::size_t gold = 0;

  bool operator==(const TaskInstance&) const = default;
};

// Index order of the eight conditionals of a quadruple:
//   0 p(x21|x11)  1 p(x22|x11)  2 p(x21|x12)  3 p(x22|x12)
//   4 p(x11|x21)  5 p(x12|x21)  6 p(x11|x22)  7 p(x12|x22)
using EightConditionals = std::array<double, 8>;

struct BigramQuadruple {
  TokenSeq context;
  std::size_t slot = 0;  // first of the two adjacent positions
  TokenId x11 = 0;
  TokenId x12 = 0;
  TokenId x21 = 0;
  TokenId x22 = 0;
  std::optional<EightConditionals> inferred;

  bool operator==(const BigramQuadruple&) const = default;
};

// validate() returns every violated invariant; an empty list means valid.
Violations validate(const Vocabulary& vocab);
Violations validate(const TokenSeq& seq, std::size_t vocab_size);
Violations validate(const MaskPattern& pattern);
Violations validate(const MaskedQuery& query);
Violations validate(const CandidateScores& scores, bool probabilities = true);
Violations validate(const TaskInstance& task);
Violations validate(const BigramQuadruple& quad);

// Checked constructors: throw InvalidArgument on any violation.
TaskInstance make_task(std::string id, TokenSeq context, std::vector<TokenSeq> candidates,
                       std::size_t gold);
BigramQuadruple make_quadruple(TokenSeq context, std::size_t slot, TokenId x11, TokenId x12,
                               TokenId x21, TokenId x22,
                               std::optional<EightConditionals> inferred = std::nullopt);

// JSON (de)serialization. from_json throws InvalidArgument on schema errors
// but does not check invariants; callers validate.
void to_json(nlohmann::json& j, const Vocabulary& v);
void from_json(const nlohmann::json& j, Vocabulary& v);
void to_json(nlohmann::json& j, const MaskPattern& p);
void from_json(const nlohmann::json& j, MaskPattern& p);
void to_json(nlohmann::json& j, const MaskedQuery& q);
void from_json(const nlohmann::json& j, MaskedQuery& q);
void to_json(nlohmann::json& j, const CandidateScores& s);
void from_json(const nlohmann::json& j, CandidateScores& s);
void to_json(nlohmann::json& j, const TaskInstance& t);
void from_json(const nlohmann::json& j, TaskInstance& t);
void to_json(nlohmann::json& j, const BigramQuadruple& q);
void from_json(const nlohmann::json& j, BigramQuadruple& q);

}  // namespace mlmc
