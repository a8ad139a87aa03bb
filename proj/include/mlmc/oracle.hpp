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

// Explicit joint distributions over V^L and the providers derived from them.
// A ConsistentProvider answers every query by exact conditioning on one joint,
// so its conditionals agree across mask patterns by construction. The noisy
// providers corrupt those answers in controlled, reproducible ways.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mlmc/core.hpp"
#include "mlmc/provider.hpp"

namespace mlmc::oracle {

inline constexpr std::size_t kMaxJointEntries = 10'000'000;

class JointTable {
 public:
  JointTable() = default;

  // Checked constructor: probabilities nonnegative and summing to 1.
  static JointTable create(Vocabulary vocab, std::size_t length, std::vector<double> probs);

  const Vocabulary& vocab() const { return vocab_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  std::size_t length() const { return length_; }
  std::span<const double> probs() const { return probs_; }

  // Row-major: position 0 is the most significant digit.
  std::size_t index_of(std::span<const TokenId> seq) const;
  TokenSeq sequence_at(std::size_t index) const;
  std::size_t stride(std::size_t position) const { return strides_[position]; }

 private:
  JointTable(Vocabulary vocab, std::size_t length, std::vector<double> probs);

  Vocabulary vocab_;
  std::size_t length_ = 0;
  std::vector<double> probs_;
  std::vector<std::size_t> strides_;
};

Violations validate(const JointTable& joint);

// Number of entries |V|^L, or nullopt when above kMaxJointEntries.
std::optional<std::size_t> table_size(std::size_t vocab_size, std::size_t length);

// Flat-Dirichlet sample: iid standard exponentials normalized to sum 1.
JointTable random_joint(const Vocabulary& vocab, std::size_t length, std::uint64_t seed);
JointTable uniform_joint(const Vocabulary& vocab, std::size_t length);

// Partial map position -> token; nullopt positions are unconstrained.
using Assignment = std::vector<std::optional<TokenId>>;

// Distribution over joint assignments of the target positions, indexed
// row-major in the order the targets were given.
struct Conditional {
  std::vector<std::size_t> targets;
  std::size_t vocab_size = 0;
  std::vector<double> probs;

  double prob(std::span<const TokenId> values) const;
};

// Exact p(targets | assignment). Throws ZeroMassError when the conditioning
// event has probability zero and RangeError on out-of-range positions.
Conditional condition(const JointTable& joint, const Assignment& assignment,
                      std::span<const std::size_t> targets);

// Probability of the conditioning event itself.
double event_mass(const JointTable& joint, const Assignment& assignment);

// Where a masked query lands in the joint: every visible or given token is
// assigned, hidden slots and trailing positions are left free, and the
// candidate occupies [target_start, target_start + candidate_length).
struct Placement {
  Assignment assignment;
  std::size_t target_start = 0;
};

Placement place_query(const MaskedQuery& query, std::size_t length,
                      std::size_t candidate_length);

struct NoiseSpec {
  double sigma = 0.0;  // log-space standard deviation, nats
  std::uint64_t seed = 0;
};

class ConsistentProvider : public Provider {
 public:
  explicit ConsistentProvider(std::shared_ptr<const JointTable> joint);

  Capability capability() const override;
  std::vector<double> score_candidates(const MaskedQuery& query,
                                       std::span<const TokenSeq> candidates) const override;

  const JointTable& joint() const { return *joint_; }

 protected:
  // Log-distribution over V at `position` given `assignment`.
  std::vector<double> step_log_probs(const Assignment& assignment, std::size_t position) const;

  std::shared_ptr<const JointTable> joint_;
};

// Exact conditioning followed by iid Gaussian log-space noise keyed by
// (seed, pattern, query content, decoded prefix, token), renormalized over
// the vocabulary at every decoding step. sigma = 0 is exactly consistent.
class PerturbedProvider : public ConsistentProvider {
 public:
  PerturbedProvider(std::shared_ptr<const JointTable> joint, NoiseSpec noise);

  std::vector<double> score_candidates(const MaskedQuery& query,
                                       std::span<const TokenSeq> candidates) const override;

  const NoiseSpec& noise() const { return noise_; }

 protected:
  // Noisy log-distribution for one decoding step. `corrupt` receives the
  // exact log-probabilities and the keyed standard-normal draws.
  std::vector<double> noisy_step(const Assignment& assignment, std::size_t position,
                                 std::uint64_t step_key) const;
  virtual void corrupt(std::vector<double>& logits, const std::vector<double>& z) const;

  NoiseSpec noise_;
};

// Confidence-correlated corruption: noise of scale sigma is drawn; if the
// noisy argmax still matches the exact argmax, the noise is shrunk by
// `shrink` and the logits are sharpened by `sharpen`, so a pattern tends to
// be more confident when it is right.
class ConfidenceNoiseProvider : public PerturbedProvider {
 public:
  ConfidenceNoiseProvider(std::shared_ptr<const JointTable> joint, NoiseSpec noise,
                          double shrink, double sharpen);

  double shrink() const { return shrink_; }
  double sharpen() const { return sharpen_; }

 protected:
  void corrupt(std::vector<double>& logits, const std::vector<double>& z) const override;

 private:
  double shrink_;
  double sharpen_;
};

std::shared_ptr<Provider> consistent_provider(std::shared_ptr<const JointTable> joint);
std::shared_ptr<Provider> perturbed_provider(std::shared_ptr<const JointTable> joint,
                                             NoiseSpec noise);

// The eight exact conditionals of a quadruple in its context, in the index
// order of EightConditionals. Throws DegenerateQuadruple on a zero value.
EightConditionals exact_conditionals(const JointTable& joint, const BigramQuadruple& quad);

// |log LHS - log RHS| of the cross-ratio identity, in nats.
double verify_cross_ratio(const JointTable& joint, const BigramQuadruple& quad);

// Total-variation distance between two distributions of equal size.
double total_variation(std::span<const double> p, std::span<const double> q);

}  // namespace mlmc::oracle
