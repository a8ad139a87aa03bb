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


#include "mlmc/bigram.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "mlmc/metrics.hpp"
#include "mlmc/parallel.hpp"
#include "mlmc/random.hpp"

namespace mlmc::bigram {

namespace {

// Signs of the log cross-ratio residual; zero for coherent conditionals.
constexpr std::array<int, 8> kSign{+1, -1, -1, +1, -1, +1, +1, -1};

// A query with the target slot at `target` and, in both-masked mode, a hidden
// one-token slot at `other`.
MaskedQuery bigram_query(const TokenSeq& context, std::size_t target, std::size_t other,
                         std::optional<TokenId> other_value) {
  MaskedQuery q;
  q.pattern = MaskPattern::baseline();
  std::uint32_t next_slot = 0;
  for (std::size_t pos = 0; pos < context.size(); ++pos) {
    if (pos == target) {
      q.target_slot = next_slot;
      q.encoder.push_back(EncoderItem::slot(next_slot++));
      q.slots.push_back(Slot{});
    } else if (pos == other && !other_value) {
      q.encoder.push_back(EncoderItem::slot(next_slot++));
      q.slots.push_back(Slot{{}, 1});
    } else if (pos == other) {
      q.encoder.push_back(EncoderItem::token(*other_value));
    } else {
      q.encoder.push_back(EncoderItem::token(context[pos]));
    }
  }
  return q;
}

}  // namespace

Inference infer_eight(const Provider& provider, const BigramQuadruple& quad,
                      const InferOptions& options) {
  require_valid(validate(quad), "BigramQuadruple");
  const std::size_t first = quad.slot;
  const std::size_t second = quad.slot + 1;
  const bool both = options.mode == ExtractionMode::kBothMasked;

  // Returns {p(a|cond), p(b|cond)} for the target position.
  auto pair = [&](std::size_t target, std::size_t other, TokenId cond, TokenId a, TokenId b) {
    const auto q = bigram_query(quad.context, target, other,
                                both ? std::nullopt : std::optional<TokenId>(cond));
    const std::vector<TokenSeq> cands{{a}, {b}};
    const auto lp = score_candidates(provider, q, cands);
    std::array<double, 2> v{std::exp(lp[0]), std::exp(lp[1])};
    if (options.pairwise_normalize) {
      const double z = v[0] + v[1];
      if (z > 0.0) v = {v[0] / z, v[1] / z};
    }
    return v;
  };

  const auto r11 = pair(second, first, quad.x11, quad.x21, quad.x22);
  const auto r12 = pair(second, first, quad.x12, quad.x21, quad.x22);
  const auto r21 = pair(first, second, quad.x21, quad.x11, quad.x12);
  const auto r22 = pair(first, second, quad.x22, quad.x11, quad.x12);

  Inference out;
  EightConditionals v{r11[0], r11[1], r12[0], r12[1], r21[0], r21[1], r22[0], r22[1]};
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] >= kDegenerateThreshold)) {
      out.skip_reason = "conditional " + std::to_string(i) + " has mass below 1e-12";
      return out;
    }
  }
  out.values = v;
  return out;
}

double solve_one(const EightConditionals& inferred, std::size_t index) {
  if (index >= 8) throw RangeError("conditional index must lie in [0, 8)");
  double acc = 0.0;
  for (std::size_t j = 0; j < 8; ++j) {
    if (j == index) continue;
    if (!(inferred[j] > 0.0)) {
      throw DegenerateQuadruple("conditional " + std::to_string(j) + " is not positive");
    }
    acc += kSign[j] * std::log(inferred[j]);
  }
  return std::exp(-kSign[index] * acc);
}

double QuadrupleResult::mean_gap() const {
  if (!gaps) return 0.0;
  return std::accumulate(gaps->begin(), gaps->end(), 0.0) / 8.0;
}

QuadrupleResult evaluate_quadruple(const Provider& provider, const BigramQuadruple& quad,
                                   const InferOptions& options) {
  QuadrupleResult r;
  r.quad = quad;
  if (quad.inferred) {
    r.inferred = quad.inferred;
  } else {
    auto inf = infer_eight(provider, quad, options);
    if (!inf.values) {
      r.skip_reason = inf.skip_reason;
      return r;
    }
    r.inferred = inf.values;
  }
  for (double v : *r.inferred) {
    if (!(v >= kDegenerateThreshold)) {
      r.skip_reason = "a stored conditional has mass below 1e-12";
      return r;
    }
  }
  EightConditionals solved{};
  EightConditionals gaps{};
  for (std::size_t i = 0; i < 8; ++i) {
    solved[i] = solve_one(*r.inferred, i);
    gaps[i] = metrics::log_prob_gap(solved[i], (*r.inferred)[i]);
  }
  r.solved = solved;
  r.gaps = gaps;
  return r;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw InvalidArgument("quantile of empty data");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BigramStats quadruple_stats(std::span<const BigramQuadruple> quads, const Provider& provider,
                            const InferOptions& options, std::size_t jobs) {
  BigramStats stats;
  stats.results.resize(quads.size());
  parallel_for(quads.size(), jobs, [&](std::size_t i) {
    try {
      stats.results[i] = evaluate_quadruple(provider, quads[i], options);
    } catch (const DegenerateQuadruple& e) {
      stats.results[i].quad = quads[i];
      stats.results[i].skip_reason = e.what();
    } catch (const ZeroMassError& e) {
      stats.results[i].quad = quads[i];
      stats.results[i].skip_reason = e.what();
    }
  });

  std::vector<double> means;
  double first_sum = 0.0;
  for (const auto& r : stats.results) {
    if (!r.gaps) {
      ++stats.skipped;
      continue;
    }
    means.push_back(r.mean_gap());
    first_sum += (*r.gaps)[0];
  }
  if (means.empty()) throw InvalidArgument("every quadruple was degenerate; no statistics");
  stats.n = means.size();
  stats.mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(stats.n);
  stats.first_only_mean = first_sum / static_cast<double>(stats.n);
  std::sort(means.begin(), means.end());
  stats.median = quantile_sorted(means, 0.5);
  stats.q25 = quantile_sorted(means, 0.25);
  stats.q75 = quantile_sorted(means, 0.75);
  return stats;
}

nlohmann::ordered_json to_json(const BigramStats& s) {
  return nlohmann::ordered_json{{"mean", s.mean},
                                {"median", s.median},
                                {"q25", s.q25},
                                {"q75", s.q75},
                                {"n", s.n},
                                {"skipped", s.skipped},
                                {"first_only_mean", s.first_only_mean}};
}

// ---------------------------------------------------------------------------
// generators

void TableBigramSource::add(const TokenSeq& sequence, std::size_t slot,
                            std::vector<std::pair<TokenId, TokenId>> proposals) {
  auto& entry = table_[{sequence, slot}];
  entry.insert(entry.end(), proposals.begin(), proposals.end());
}

std::vector<std::pair<TokenId, TokenId>> TableBigramSource::propose(const TokenSeq& sequence,
                                                                    std::size_t slot) const {
  auto it = table_.find({sequence, slot});
  return it == table_.end() ? std::vector<std::pair<TokenId, TokenId>>{} : it->second;
}

CorpusBigramSource::CorpusBigramSource(std::span<const TokenSeq> corpus) {
  std::set<std::pair<TokenId, TokenId>> seen;
  for (const auto& seq : corpus) {
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) seen.insert({seq[i], seq[i + 1]});
  }
  bigrams_.assign(seen.begin(), seen.end());
}

std::vector<std::pair<TokenId, TokenId>> CorpusBigramSource::propose(const TokenSeq&,
                                                                     std::size_t) const {
  return bigrams_;
}

TopBigramSource::TopBigramSource(const Provider& provider, std::size_t beam)
    : provider_(provider), beam_(beam) {
  const auto cap = provider.capability();
  if (!cap.vocab_size) throw InvalidArgument("TopBigramSource needs a known vocabulary size");
  vocab_size_ = *cap.vocab_size;
}

std::vector<std::pair<TokenId, TokenId>> TopBigramSource::propose(const TokenSeq& sequence,
                                                                  std::size_t slot) const {
  if (slot + 1 >= sequence.size()) return {};
  MaskedQuery q;
  q.pattern = MaskPattern::baseline();
  for (std::size_t pos = 0; pos < sequence.size(); ++pos) {
    if (pos == slot) {
      q.encoder.push_back(EncoderItem::slot(0));
      ++pos;  // the slot spans both positions
    } else {
      q.encoder.push_back(EncoderItem::token(sequence[pos]));
    }
  }
  q.slots.push_back(Slot{});
  q.target_slot = 0;

  std::vector<TokenSeq> cands;
  cands.reserve(vocab_size_ * vocab_size_);
  for (TokenId a = 0; a < vocab_size_; ++a) {
    for (TokenId b = 0; b < vocab_size_; ++b) cands.push_back({a, b});
  }
  const auto scores = score_candidates(provider_, q, cands);
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return scores[x] > scores[y]; });
  std::vector<std::pair<TokenId, TokenId>> out;
  for (std::size_t i = 0; i < std::min(beam_, order.size()); ++i) {
    if (!std::isfinite(scores[order[i]])) break;
    out.emplace_back(cands[order[i]][0], cands[order[i]][1]);
  }
  return out;
}

std::vector<BigramQuadruple> generate_quadruples(std::span<const TokenSeq> corpus,
                                                 const AlternativeBigramSource& generator,
                                                 std::size_t max, std::uint64_t seed) {
  std::vector<BigramQuadruple> out;
  for (std::size_t s = 0; s < corpus.size() && out.size() < max; ++s) {
    const TokenSeq& seq = corpus[s];
    for (std::size_t pos = 0; pos + 1 < seq.size() && out.size() < max; ++pos) {
      const TokenId x11 = seq[pos];
      const TokenId x21 = seq[pos + 1];
      auto proposals = generator.propose(seq, pos);
      std::set<std::pair<TokenId, TokenId>> have(proposals.begin(), proposals.end());
      have.insert({x11, x21});

      std::set<TokenId> firsts;
      std::set<TokenId> seconds;
      for (const auto& [a, b] : have) {
        firsts.insert(a);
        seconds.insert(b);
      }
      std::vector<std::pair<TokenId, TokenId>> options;
      for (TokenId x12 : firsts) {
        if (x12 == x11 || !have.count({x12, x21})) continue;
        for (TokenId x22 : seconds) {
          if (x22 == x21) continue;
          if (have.count({x11, x22}) && have.count({x12, x22})) options.emplace_back(x12, x22);
        }
      }
      if (options.empty()) continue;
      Rng rng(hash_combine(hash_combine(seed, s), pos));
      const auto& [x12, x22] = options[rng.below(options.size())];
      out.push_back(make_quadruple(seq, pos, x11, x12, x21, x22));
    }
  }
  return out;
}

}  // namespace mlmc::bigram
