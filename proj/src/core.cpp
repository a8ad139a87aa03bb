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


#include "mlmc/core.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace mlmc {

using nlohmann::json;

std::string describe(const Violations& violations) {
  std::ostringstream out;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) out << "; ";
    out << violations[i].field << ": " << violations[i].rule;
  }
  return out.str();
}

void require_valid(const Violations& violations, const std::string& what) {
  if (!violations.empty()) {
    throw InvalidArgument("invalid " + what + ": " + describe(violations));
  }
}

Vocabulary Vocabulary::create(std::vector<std::string> tokens) {
  Vocabulary v(std::move(tokens));
  require_valid(validate(v), "Vocabulary");
  return v;
}

Vocabulary Vocabulary::of_size(std::size_t size) {
  std::vector<std::string> tokens;
  tokens.reserve(size);
  for (std::size_t i = 0; i < size; ++i) tokens.push_back("t" + std::to_string(i));
  return create(std::move(tokens));
}

MaskPattern MaskPattern::koffset(int k) {
  MaskPattern p;
  p.kind = Kind::kKOffset;
  p.k = k;
  require_valid(validate(p), "MaskPattern");
  return p;
}

MaskPattern MaskPattern::multimask(int n, int s, int g) {
  MaskPattern p;
  p.kind = Kind::kMultimask;
  p.n = n;
  p.s = s;
  p.g = g;
  require_valid(validate(p), "MaskPattern");
  return p;
}

std::string MaskPattern::name() const {
  switch (kind) {
    case Kind::kBaseline:
      return "baseline";
    case Kind::kKOffset:
      return "koffset(" + std::to_string(k) + ")";
    case Kind::kMultimask:
      return "multimask(" + std::to_string(n) + "," + std::to_string(s) + "," +
             std::to_string(g) + ")";
  }
  return "unknown";
}

TokenSeq MaskedQuery::decoder_prefix() const {
  TokenSeq prefix;
  for (std::size_t i = 0; i < target_slot && i < slots.size(); ++i) {
    prefix.insert(prefix.end(), slots[i].given.begin(), slots[i].given.end());
  }
  return prefix;
}

// ---------------------------------------------------------------------------
// validation

Violations validate(const Vocabulary& vocab) {
  Violations out;
  if (vocab.size() < 2) out.push_back({"tokens", "|V| >= 2"});
  std::set<std::string> seen(vocab.tokens().begin(), vocab.tokens().end());
  if (seen.size() != vocab.size()) out.push_back({"tokens", "tokens distinct"});
  return out;
}

Violations validate(const TokenSeq& seq, std::size_t vocab_size) {
  Violations out;
  if (seq.empty()) out.push_back({"ids", "L >= 1"});
  for (TokenId id : seq) {
    if (id >= vocab_size) {
      out.push_back({"ids", "id < |V|"});
      break;
    }
  }
  return out;
}

Violations validate(const MaskPattern& p) {
  Violations out;
  switch (p.kind) {
    case MaskPattern::Kind::kBaseline:
      break;
    case MaskPattern::Kind::kKOffset:
      if (p.k < 1) out.push_back({"k", "k >= 1"});
      break;
    case MaskPattern::Kind::kMultimask:
      if (p.n < 1) out.push_back({"n", "n >= 1"});
      if (p.s < 1) out.push_back({"s", "s >= 1"});
      if (p.g < 0) out.push_back({"g", "g >= 0"});
      break;
  }
  return out;
}

Violations validate(const MaskedQuery& q) {
  Violations out;
  auto pv = validate(q.pattern);
  out.insert(out.end(), pv.begin(), pv.end());
  if (q.target_slot >= q.slots.size()) {
    out.push_back({"target_slot", "refers to an existing sentinel slot"});
    return out;
  }
  // Each slot appears exactly once in the encoder, in increasing order.
  std::uint32_t next = 0;
  bool ordered = true;
  for (const auto& item : q.encoder) {
    if (!item.is_slot) continue;
    if (item.value != next) ordered = false;
    ++next;
  }
  if (!ordered || next != q.slots.size()) {
    out.push_back({"encoder", "slots appear once each in increasing order"});
  }
  for (std::size_t i = 0; i < q.slots.size(); ++i) {
    const Slot& s = q.slots[i];
    if (i == q.target_slot) {
      if (s.filled()) out.push_back({"slots", "target slot carries no given tokens"});
      continue;
    }
    if (s.width == 0) out.push_back({"slots", "non-target slot width >= 1"});
    if (s.filled() && s.given.size() != s.width) {
      out.push_back({"slots", "given tokens match slot width"});
    }
  }
  return out;
}

Violations validate(const CandidateScores& scores, bool probabilities) {
  Violations out;
  if (scores.candidates.empty()) out.push_back({"candidates", "at least one candidate"});
  for (const auto& c : scores.candidates) {
    if (c.empty()) {
      out.push_back({"candidates", "candidate token sequences nonempty"});
      break;
    }
  }
  for (const auto& row : scores.rows) {
    auto pv = validate(row.pattern);
    out.insert(out.end(), pv.begin(), pv.end());
    if (row.skipped()) {
      if (!row.log_p.empty()) out.push_back({"log_p", "skipped rows carry no scores"});
      continue;
    }
    if (row.log_p.size() != scores.candidates.size()) {
      out.push_back({"log_p", "matrix dimensions match pattern and candidate counts"});
      continue;
    }
    for (double v : row.log_p) {
      if (!std::isfinite(v)) {
        out.push_back({"log_p", "every entry finite"});
        break;
      }
      if (probabilities && v > 0.0) {
        out.push_back({"log_p", "entries <= 0"});
        break;
      }
    }
  }
  return out;
}

Violations validate(const TaskInstance& t) {
  Violations out;
  if (t.candidates.size() < 2) out.push_back({"candidates", ">= 2 candidates"});
  if (t.gold >= t.candidates.size()) out.push_back({"gold", "gold in range"});
  for (const auto& c : t.candidates) {
    if (c.empty()) {
      out.push_back({"candidates", "candidate token sequences nonempty"});
      break;
    }
  }
  return out;
}

Violations validate(const BigramQuadruple& q) {
  Violations out;
  if (q.slot + 1 >= q.context.size()) {
    out.push_back({"slot", "two adjacent positions inside context"});
  }
  if (q.x11 == q.x12) out.push_back({"x11,x12", "x11 != x12"});
  if (q.x21 == q.x22) out.push_back({"x21,x22", "x21 != x22"});
  if (q.inferred) {
    for (double v : *q.inferred) {
      if (!(v > 0.0 && v <= 1.0)) {
        out.push_back({"inferred", "in (0,1]"});
        break;
      }
    }
  }
  return out;
}

TaskInstance make_task(std::string id, TokenSeq context, std::vector<TokenSeq> candidates,
                       std::size_t gold) {
  TaskInstance t{std::move(id), std::move(context), std::move(candidates), gold};
  require_valid(validate(t), "TaskInstance");
  return t;
}

BigramQuadruple make_quadruple(TokenSeq context, std::size_t slot, TokenId x11, TokenId x12,
                               TokenId x21, TokenId x22,
                               std::optional<EightConditionals> inferred) {
  BigramQuadruple q{std::move(context), slot, x11, x12, x21, x22, inferred};
  require_valid(validate(q), "BigramQuadruple");
  return q;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <typename T>
T field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) {
    throw InvalidArgument(std::string("missing field \"") + name + "\"");
  }
  try {
    return j.at(name).get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("field \"") + name + "\": " + e.what());
  }
}

}  // namespace

void to_json(json& j, const Vocabulary& v) { j = json{{"tokens", v.tokens()}}; }

void from_json(const json& j, Vocabulary& v) {
  v = Vocabulary(field<std::vector<std::string>>(j, "tokens"));
}

void to_json(json& j, const MaskPattern& p) {
  switch (p.kind) {
    case MaskPattern::Kind::kBaseline:
      j = json{{"variant", "baseline"}};
      break;
    case MaskPattern::Kind::kKOffset:
      j = json{{"variant", "koffset"}, {"k", p.k}};
      break;
    case MaskPattern::Kind::kMultimask:
      j = json{{"variant", "multimask"}, {"n", p.n}, {"s", p.s}, {"g", p.g}};
      break;
  }
}

void from_json(const json& j, MaskPattern& p) {
  const auto variant = field<std::string>(j, "variant");
  p = MaskPattern{};
  if (variant == "baseline") {
    return;
  } else if (variant == "koffset") {
    p.kind = MaskPattern::Kind::kKOffset;
    p.k = field<int>(j, "k");
  } else if (variant == "multimask") {
    p.kind = MaskPattern::Kind::kMultimask;
    p.n = field<int>(j, "n");
    p.s = field<int>(j, "s");
    p.g = field<int>(j, "g");
  } else {
    throw InvalidArgument("unknown pattern variant \"" + variant + "\"");
  }
}

void to_json(json& j, const MaskedQuery& q) {
  json enc = json::array();
  for (const auto& item : q.encoder) {
    // Slots use the wire convention: -1, -2, ... per slot index.
    enc.push_back(item.is_slot ? -static_cast<std::int64_t>(item.value) - 1
                               : static_cast<std::int64_t>(item.value));
  }
  json slots = json::array();
  for (const auto& s : q.slots) slots.push_back(json{{"given", s.given}, {"width", s.width}});
  j = json{{"pattern", q.pattern}, {"encoder", enc}, {"slots", slots},
           {"target_slot", q.target_slot}};
}

void from_json(const json& j, MaskedQuery& q) {
  q = MaskedQuery{};
  q.pattern = field<MaskPattern>(j, "pattern");
  for (auto v : field<std::vector<std::int64_t>>(j, "encoder")) {
    q.encoder.push_back(v < 0 ? EncoderItem::slot(static_cast<std::uint32_t>(-v - 1))
                              : EncoderItem::token(static_cast<TokenId>(v)));
  }
  for (const auto& s : field<json>(j, "slots")) {
    q.slots.push_back(Slot{field<std::vector<TokenId>>(s, "given"),
                           field<std::size_t>(s, "width")});
  }
  q.target_slot = field<std::size_t>(j, "target_slot");
}

void to_json(json& j, const CandidateScores& s) {
  json rows = json::array();
  for (const auto& r : s.rows) {
    json row{{"pattern", r.pattern}, {"log_p", r.log_p}};
    if (r.skip_reason) row["skip_reason"] = *r.skip_reason;
    rows.push_back(std::move(row));
  }
  j = json{{"candidates", s.candidates}, {"rows", rows}};
}

void from_json(const json& j, CandidateScores& s) {
  s = CandidateScores{};
  s.candidates = field<std::vector<TokenSeq>>(j, "candidates");
  for (const auto& r : field<json>(j, "rows")) {
    ScoreRow row;
    row.pattern = field<MaskPattern>(r, "pattern");
    row.log_p = field<std::vector<double>>(r, "log_p");
    if (r.contains("skip_reason")) row.skip_reason = field<std::string>(r, "skip_reason");
    s.rows.push_back(std::move(row));
  }
}

void to_json(json& j, const TaskInstance& t) {
  j = json{{"id", t.id}, {"context", t.context}, {"candidates", t.candidates}, {"gold", t.gold}};
}

void from_json(const json& j, TaskInstance& t) {
  t.id = field<std::string>(j, "id");
  t.context = field<TokenSeq>(j, "context");
  t.candidates = field<std::vector<TokenSeq>>(j, "candidates");
  const auto gold = field<std::int64_t>(j, "gold");
  if (gold < 0) throw InvalidArgument("field \"gold\": negative");
  t.gold = static_cast<std::size_t>(gold);
}

void to_json(json& j, const BigramQuadruple& q) {
  j = json{{"context", q.context}, {"slot", q.slot}, {"x11", q.x11},
           {"x12", q.x12},         {"x21", q.x21},   {"x22", q.x22}};
  if (q.inferred) j["inferred"] = *q.inferred;
}

void from_json(const json& j, BigramQuadruple& q) {
  q.context = field<TokenSeq>(j, "context");
  q.slot = field<std::size_t>(j, "slot");
  q.x11 = field<TokenId>(j, "x11");
  q.x12 = field<TokenId>(j, "x12");
  q.x21 = field<TokenId>(j, "x21");
  q.x22 = field<TokenId>(j, "x22");
  q.inferred.reset();
  if (j.contains("inferred")) {
    const auto v = field<std::vector<double>>(j, "inferred");
    if (v.size() != 8) throw InvalidArgument("field \"inferred\": expected 8 values");
    EightConditionals arr{};
    std::copy(v.begin(), v.end(), arr.begin());
    q.inferred = arr;
  }
}

}  // namespace mlmc
