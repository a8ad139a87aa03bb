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


#include "mlmc/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mlmc/random.hpp"

namespace mlmc::oracle {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// Compensated summation; tables reach 10^7 entries.
double stable_sum(std::span<const double> xs) {
  double sum = 0.0;
  double carry = 0.0;
  for (double x : xs) {
    const double t = sum + x;
    carry += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return sum + carry;
}

void log_normalize(std::vector<double>& logits) {
  double hi = kNegInf;
  for (double x : logits) hi = std::max(hi, x);
  if (!std::isfinite(hi)) throw ZeroMassError("no token has positive mass");
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - hi);
  const double log_z = hi + std::log(sum);
  for (double& x : logits) x -= log_z;
}

std::uint64_t query_fingerprint(const MaskedQuery& q) {
  std::uint64_t h = hash_string(q.pattern.name());
  for (const auto& item : q.encoder) {
    h = hash_combine(h, item.is_slot ? (0x8000000000000000ULL | item.value) : item.value);
  }
  for (const auto& s : q.slots) {
    h = hash_combine(h, s.width);
    for (TokenId t : s.given) h = hash_combine(h, t);
    h = hash_combine(h, 0xfeedULL);
  }
  return hash_combine(h, q.target_slot);
}

}  // namespace

// ---------------------------------------------------------------------------
// JointTable

std::optional<std::size_t> table_size(std::size_t vocab_size, std::size_t length) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < length; ++i) {
    if (vocab_size != 0 && n > kMaxJointEntries / vocab_size) return std::nullopt;
    n *= vocab_size;
  }
  if (n > kMaxJointEntries) return std::nullopt;
  return n;
}

JointTable::JointTable(Vocabulary vocab, std::size_t length, std::vector<double> probs)
    : vocab_(std::move(vocab)), length_(length), probs_(std::move(probs)) {
  strides_.assign(length_, 1);
  for (std::size_t i = length_; i-- > 1;) strides_[i - 1] = strides_[i] * vocab_.size();
}

JointTable JointTable::create(Vocabulary vocab, std::size_t length, std::vector<double> probs) {
  JointTable t(std::move(vocab), length, std::move(probs));
  require_valid(validate(t), "JointTable");
  return t;
}

Violations validate(const JointTable& joint) {
  Violations out = validate(joint.vocab());
  if (joint.length() < 1) out.push_back({"length", "L >= 1"});
  const auto size = table_size(joint.vocab_size(), joint.length());
  if (!size) {
    out.push_back({"probs", "|V|^L <= 10^7"});
    return out;
  }
  if (joint.probs().size() != *size) {
    out.push_back({"probs", "|V|^L entries"});
    return out;
  }
  bool nonneg = true;
  for (double p : joint.probs()) {
    if (!(p >= 0.0)) nonneg = false;
  }
  const double sum = stable_sum(joint.probs());
  if (!nonneg) out.push_back({"probs", "every entry >= 0"});
  if (!(std::abs(sum - 1.0) <= 1e-12)) out.push_back({"probs", "sum of probs = 1"});
  return out;
}

std::size_t JointTable::index_of(std::span<const TokenId> seq) const {
  if (seq.size() != length_) throw RangeError("sequence length does not match joint");
  std::size_t idx = 0;
  for (std::size_t i = 0; i < length_; ++i) {
    if (seq[i] >= vocab_.size()) throw RangeError("token id out of vocabulary");
    idx += seq[i] * strides_[i];
  }
  return idx;
}

TokenSeq JointTable::sequence_at(std::size_t index) const {
  TokenSeq seq(length_);
  for (std::size_t i = 0; i < length_; ++i) {
    seq[i] = static_cast<TokenId>(index / strides_[i]);
    index %= strides_[i];
  }
  return seq;
}

JointTable random_joint(const Vocabulary& vocab, std::size_t length, std::uint64_t seed) {
  const auto size = table_size(vocab.size(), length);
  if (!size) throw InvalidArgument("joint table infeasible: |V|^L exceeds 10^7");
  Rng rng(hash_combine(seed, 0x6a6f696e74ULL));
  std::vector<double> probs(*size);
  for (double& p : probs) p = rng.exponential();
  const double sum = stable_sum(probs);
  for (double& p : probs) p /= sum;
  // Push the rounding residue into the largest entry so the sum is 1 to
  // within an ulp or two.
  const double total = stable_sum(probs);
  auto big = std::max_element(probs.begin(), probs.end());
  *big += 1.0 - total;
  return JointTable::create(vocab, length, std::move(probs));
}

JointTable uniform_joint(const Vocabulary& vocab, std::size_t length) {
  const auto size = table_size(vocab.size(), length);
  if (!size) throw InvalidArgument("joint table infeasible: |V|^L exceeds 10^7");
  return JointTable::create(vocab, length, std::vector<double>(*size, 1.0 / *size));
}

// ---------------------------------------------------------------------------
// conditioning

double Conditional::prob(std::span<const TokenId> values) const {
  if (values.size() != targets.size()) throw RangeError("wrong number of target values");
  std::size_t idx = 0;
  for (TokenId v : values) {
    if (v >= vocab_size) throw RangeError("token id out of vocabulary");
    idx = idx * vocab_size + v;
  }
  return probs[idx];
}

namespace {

// Sums joint mass over all completions of `assignment`, bucketed by the
// values of `targets`.
std::vector<double> accumulate_mass(const JointTable& joint, const Assignment& assignment,
                                    std::span<const std::size_t> targets) {
  const std::size_t L = joint.length();
  const std::size_t V = joint.vocab_size();
  if (assignment.size() != L) throw RangeError("assignment length does not match joint");

  std::vector<char> is_target(L, 0);
  for (std::size_t t : targets) {
    if (t >= L) throw RangeError("target position out of range");
    if (assignment[t]) throw InvalidArgument("assignment and targets must be disjoint");
    if (is_target[t]) throw InvalidArgument("duplicate target position");
    is_target[t] = 1;
  }

  std::size_t base = 0;
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < L; ++i) {
    if (assignment[i]) {
      if (*assignment[i] >= V) throw RangeError("token id out of vocabulary");
      base += *assignment[i] * joint.stride(i);
    } else if (!is_target[i]) {
      free.push_back(i);
    }
  }

  std::size_t out_size = 1;
  for (std::size_t i = 0; i < targets.size(); ++i) out_size *= V;
  std::vector<double> out(out_size, 0.0);

  const auto probs = joint.probs();
  std::vector<TokenId> tv(targets.size(), 0);
  for (std::size_t out_idx = 0; out_idx < out_size; ++out_idx) {
    std::size_t idx = base;
    for (std::size_t i = 0; i < targets.size(); ++i) idx += tv[i] * joint.stride(targets[i]);
    // Odometer over free positions.
    std::vector<TokenId> fv(free.size(), 0);
    double sum = 0.0;
    while (true) {
      std::size_t j = idx;
      for (std::size_t i = 0; i < free.size(); ++i) j += fv[i] * joint.stride(free[i]);
      sum += probs[j];
      std::size_t pos = 0;
      while (pos < fv.size() && ++fv[pos] == V) fv[pos++] = 0;
      if (pos == fv.size()) break;
    }
    out[out_idx] = sum;
    // Advance target odometer, last target least significant.
    for (std::size_t i = targets.size(); i-- > 0;) {
      if (++tv[i] < V) break;
      tv[i] = 0;
    }
  }
  return out;
}

}  // namespace

Conditional condition(const JointTable& joint, const Assignment& assignment,
                      std::span<const std::size_t> targets) {
  if (targets.empty()) throw InvalidArgument("targets must be nonempty");
  Conditional c;
  c.targets.assign(targets.begin(), targets.end());
  c.vocab_size = joint.vocab_size();
  c.probs = accumulate_mass(joint, assignment, targets);
  const double total = stable_sum(c.probs);
  if (!(total > 0.0)) throw ZeroMassError("conditioning event has probability zero");
  for (double& p : c.probs) p /= total;
  return c;
}

double event_mass(const JointTable& joint, const Assignment& assignment) {
  return accumulate_mass(joint, assignment, {})[0];
}

Placement place_query(const MaskedQuery& query, std::size_t length,
                      std::size_t candidate_length) {
  require_valid(validate(query), "MaskedQuery");
  Placement out;
  out.assignment.assign(length, std::nullopt);
  std::size_t pos = 0;
  auto claim = [&](std::size_t n) {
    if (pos + n > length) throw RangeError("query extends beyond sequence length");
    pos += n;
  };
  for (const auto& item : query.encoder) {
    if (!item.is_slot) {
      claim(1);
      out.assignment[pos - 1] = item.value;
      continue;
    }
    if (item.value == query.target_slot) {
      out.target_start = pos;
      claim(candidate_length);
      continue;
    }
    const Slot& slot = query.slots[item.value];
    const std::size_t start = pos;
    claim(slot.width);
    for (std::size_t i = 0; i < slot.given.size(); ++i) out.assignment[start + i] = slot.given[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// providers

ConsistentProvider::ConsistentProvider(std::shared_ptr<const JointTable> joint)
    : joint_(std::move(joint)) {
  if (!joint_) throw InvalidArgument("null joint table");
}

Capability ConsistentProvider::capability() const {
  Capability c;
  c.max_context_length = joint_->length();
  c.deterministic = true;
  c.vocab_size = joint_->vocab_size();
  return c;
}

std::vector<double> ConsistentProvider::step_log_probs(const Assignment& assignment,
                                                       std::size_t position) const {
  const std::size_t target[] = {position};
  auto c = condition(*joint_, assignment, target);
  std::vector<double> out(c.probs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(c.probs[i]);
  return out;
}

std::vector<double> ConsistentProvider::score_candidates(
    const MaskedQuery& query, std::span<const TokenSeq> candidates) const {
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& cand : candidates) {
    if (cand.empty()) throw InvalidArgument("empty candidate");
    auto placed = place_query(query, joint_->length(), cand.size());
    double total = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      const std::size_t pos = placed.target_start + i;
      if (cand[i] >= joint_->vocab_size()) throw RangeError("candidate token out of vocabulary");
      total += step_log_probs(placed.assignment, pos)[cand[i]];
      if (!std::isfinite(total)) break;
      placed.assignment[pos] = cand[i];
    }
    scores.push_back(total);
  }
  return scores;
}

PerturbedProvider::PerturbedProvider(std::shared_ptr<const JointTable> joint, NoiseSpec noise)
    : ConsistentProvider(std::move(joint)), noise_(noise) {
  if (!(noise_.sigma >= 0.0)) throw InvalidArgument("sigma must be >= 0");
}

void PerturbedProvider::corrupt(std::vector<double>& logits, const std::vector<double>& z) const {
  for (std::size_t v = 0; v < logits.size(); ++v) logits[v] += noise_.sigma * z[v];
}

std::vector<double> PerturbedProvider::noisy_step(const Assignment& assignment,
                                                  std::size_t position,
                                                  std::uint64_t step_key) const {
  auto logits = step_log_probs(assignment, position);
  std::vector<double> z(logits.size());
  for (std::size_t v = 0; v < z.size(); ++v) z[v] = keyed_normal(hash_combine(step_key, v));
  corrupt(logits, z);
  log_normalize(logits);
  return logits;
}

std::vector<double> PerturbedProvider::score_candidates(
    const MaskedQuery& query, std::span<const TokenSeq> candidates) const {
  if (noise_.sigma == 0.0) return ConsistentProvider::score_candidates(query, candidates);
  const std::uint64_t qkey = hash_combine(hash_combine(noise_.seed, 0x7065727475ULL),
                                          query_fingerprint(query));
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& cand : candidates) {
    if (cand.empty()) throw InvalidArgument("empty candidate");
    auto placed = place_query(query, joint_->length(), cand.size());
    double total = 0.0;
    std::uint64_t step_key = qkey;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      const std::size_t pos = placed.target_start + i;
      if (cand[i] >= joint_->vocab_size()) throw RangeError("candidate token out of vocabulary");
      total += noisy_step(placed.assignment, pos, hash_combine(step_key, i))[cand[i]];
      if (!std::isfinite(total)) break;
      placed.assignment[pos] = cand[i];
      step_key = hash_combine(step_key, cand[i]);
    }
    scores.push_back(total);
  }
  return scores;
}

ConfidenceNoiseProvider::ConfidenceNoiseProvider(std::shared_ptr<const JointTable> joint,
                                                 NoiseSpec noise, double shrink, double sharpen)
    : PerturbedProvider(std::move(joint), noise), shrink_(shrink), sharpen_(sharpen) {
  if (!(shrink_ >= 0.0)) throw InvalidArgument("shrink must be >= 0");
  if (!(sharpen_ > 0.0)) throw InvalidArgument("sharpen must be > 0");
}

void ConfidenceNoiseProvider::corrupt(std::vector<double>& logits,
                                      const std::vector<double>& z) const {
  const std::size_t truth = argmax_lowest(logits);
  std::vector<double> noisy(logits.size());
  for (std::size_t v = 0; v < logits.size(); ++v) noisy[v] = logits[v] + noise_.sigma * z[v];
  if (argmax_lowest(noisy) != truth) {
    logits = std::move(noisy);
    return;
  }
  for (std::size_t v = 0; v < logits.size(); ++v) {
    logits[v] = sharpen_ * (logits[v] + shrink_ * noise_.sigma * z[v]);
  }
}

std::shared_ptr<Provider> consistent_provider(std::shared_ptr<const JointTable> joint) {
  return std::make_shared<ConsistentProvider>(std::move(joint));
}

std::shared_ptr<Provider> perturbed_provider(std::shared_ptr<const JointTable> joint,
                                             NoiseSpec noise) {
  return std::make_shared<PerturbedProvider>(std::move(joint), noise);
}

// ---------------------------------------------------------------------------
// cross-ratio

EightConditionals exact_conditionals(const JointTable& joint, const BigramQuadruple& quad) {
  require_valid(validate(quad), "BigramQuadruple");
  if (quad.context.size() != joint.length()) {
    throw RangeError("quadruple context length does not match joint");
  }
  const std::size_t first = quad.slot;
  const std::size_t second = quad.slot + 1;
  Assignment base(quad.context.begin(), quad.context.end());

  auto cond = [&](std::size_t fixed_pos, TokenId fixed, std::size_t target_pos, TokenId value) {
    Assignment a = base;
    a[fixed_pos] = fixed;
    a[target_pos] = std::nullopt;
    const std::size_t t[] = {target_pos};
    try {
      const TokenId v[] = {value};
      return condition(joint, a, t).prob(v);
    } catch (const ZeroMassError&) {
      throw DegenerateQuadruple("conditioning bigram position has zero mass");
    }
  };

  EightConditionals out{
      cond(first, quad.x11, second, quad.x21), cond(first, quad.x11, second, quad.x22),
      cond(first, quad.x12, second, quad.x21), cond(first, quad.x12, second, quad.x22),
      cond(second, quad.x21, first, quad.x11), cond(second, quad.x21, first, quad.x12),
      cond(second, quad.x22, first, quad.x11), cond(second, quad.x22, first, quad.x12),
  };
  for (double v : out) {
    if (!(v > 0.0)) throw DegenerateQuadruple("a bigram of the quadruple is impossible");
  }
  return out;
}

double verify_cross_ratio(const JointTable& joint, const BigramQuadruple& quad) {
  const auto p = exact_conditionals(joint, quad);
  const double lhs = std::log(p[0]) - std::log(p[1]) + std::log(p[6]) - std::log(p[7]);
  const double rhs = std::log(p[4]) - std::log(p[5]) + std::log(p[2]) - std::log(p[3]);
  return std::abs(lhs - rhs);
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidArgument("distribution sizes differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - q[i]);
  return 0.5 * sum;
}

}  // namespace mlmc::oracle
