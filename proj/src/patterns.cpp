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


#include "mlmc/patterns.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include "mlmc/random.hpp"

namespace mlmc::patterns {

namespace {

using u128 = unsigned __int128;

constexpr u128 kCountCap = static_cast<u128>(std::numeric_limits<std::uint64_t>::max());

// C(n, k), saturating at kCountCap.
u128 choose(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  u128 r = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;
    if (r > kCountCap) return kCountCap;
  }
  return r;
}

// Number of ways to place `spans` more spans into `available` positions,
// each preceded by a gap of at least g.
u128 completions(std::size_t available, std::size_t spans, std::size_t s, std::size_t g) {
  if (spans == 0) return 1;
  const std::size_t need = spans * (s + g);
  if (available < need) return 0;
  return choose(available - need + spans, spans);
}

}  // namespace

PatternDoesNotFit::PatternDoesNotFit(const MaskPattern& pattern, std::size_t context_length,
                                     std::size_t required)
    : Error("pattern " + pattern.name() + " does not fit a context of " +
            std::to_string(context_length) + " tokens; requires at least " +
            std::to_string(required)),
      context_length_(context_length),
      required_length_(required) {}

std::size_t required_length(const MaskPattern& p) {
  switch (p.kind) {
    case MaskPattern::Kind::kBaseline:
      return 0;
    case MaskPattern::Kind::kKOffset:
      return static_cast<std::size_t>(p.k) + 1;
    case MaskPattern::Kind::kMultimask:
      return static_cast<std::size_t>(p.n * p.s + (p.n - 1) * p.g);
  }
  return 0;
}

MaskedQuery apply_pattern(const TokenSeq& context, const MaskPattern& pattern,
                          std::uint64_t seed) {
  require_valid(validate(pattern), "MaskPattern");
  const std::size_t len = context.size();
  const std::size_t need = required_length(pattern);
  if (len < need) throw PatternDoesNotFit(pattern, len, need);

  MaskedQuery q;
  q.pattern = pattern;
  switch (pattern.kind) {
    case MaskPattern::Kind::kBaseline: {
      for (TokenId t : context) q.encoder.push_back(EncoderItem::token(t));
      q.encoder.push_back(EncoderItem::slot(0));
      q.slots.push_back(Slot{});
      q.target_slot = 0;
      break;
    }
    case MaskPattern::Kind::kKOffset: {
      const std::size_t keep = len - static_cast<std::size_t>(pattern.k);
      for (std::size_t i = 0; i < keep; ++i) q.encoder.push_back(EncoderItem::token(context[i]));
      q.encoder.push_back(EncoderItem::slot(0));
      q.encoder.push_back(EncoderItem::slot(1));
      Slot removed;
      removed.given.assign(context.begin() + static_cast<std::ptrdiff_t>(keep), context.end());
      removed.width = removed.given.size();
      q.slots.push_back(std::move(removed));
      q.slots.push_back(Slot{});
      q.target_slot = 1;
      break;
    }
    case MaskPattern::Kind::kMultimask: {
      const auto n = static_cast<std::size_t>(pattern.n);
      const auto s = static_cast<std::size_t>(pattern.s);
      const auto g = static_cast<std::size_t>(pattern.g);
      const u128 total = completions(len + g, n, s, g);  // first span has no leading gap
      if (total >= kCountCap) {
        throw InvalidArgument("too many multimask placements to enumerate for " + pattern.name());
      }
      Rng rng(hash_combine(seed, hash_string(pattern.name())));
      auto rank = static_cast<u128>(rng.below(static_cast<std::uint64_t>(total)));

      // Unrank the placement in leftmost-first lexicographic order of span
      // starts.
      std::vector<std::size_t> starts;
      std::size_t min_start = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t rest = n - i - 1;
        for (std::size_t p = min_start;; ++p) {
          const u128 c = p + s <= len ? completions(len - p - s, rest, s, g) : 0;
          if (rank < c) {
            starts.push_back(p);
            min_start = p + s + g;
            break;
          }
          rank -= c;
        }
      }

      std::size_t pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        for (; pos < starts[i]; ++pos) q.encoder.push_back(EncoderItem::token(context[pos]));
        q.encoder.push_back(EncoderItem::slot(static_cast<std::uint32_t>(i)));
        Slot span;
        span.given.assign(context.begin() + static_cast<std::ptrdiff_t>(pos),
                          context.begin() + static_cast<std::ptrdiff_t>(pos + s));
        span.width = s;
        q.slots.push_back(std::move(span));
        pos += s;
      }
      for (; pos < len; ++pos) q.encoder.push_back(EncoderItem::token(context[pos]));
      q.encoder.push_back(EncoderItem::slot(static_cast<std::uint32_t>(n)));
      q.slots.push_back(Slot{});
      q.target_slot = n;
      break;
    }
  }
  return q;
}

std::vector<MaskPattern> preset_patterns(PresetKey key) {
  const bool wide = (key.model == ModelKind::kUl2Like && key.task != TaskKind::kBigBenchLike) ||
                    (key.model == ModelKind::kT5Like && key.task == TaskKind::kLambadaLike);
  std::vector<MaskPattern> out{MaskPattern::baseline()};
  if (wide) {
    for (int k = 1; k <= 6; ++k) out.push_back(MaskPattern::koffset(k));
    out.push_back(MaskPattern::multimask(3, 5, 1));
    out.push_back(MaskPattern::multimask(3, 5, 2));
    out.push_back(MaskPattern::multimask(3, 10, 1));
  } else {
    for (int k = 1; k <= 3; ++k) out.push_back(MaskPattern::koffset(k));
    out.push_back(MaskPattern::multimask(3, 5, 1));
    out.push_back(MaskPattern::multimask(3, 5, 2));
    out.push_back(MaskPattern::multimask(3, 3, 1));
    out.push_back(MaskPattern::multimask(3, 3, 2));
    out.push_back(MaskPattern::multimask(3, 4, 1));
    out.push_back(MaskPattern::multimask(3, 4, 2));
  }
  return out;
}

std::vector<MaskPattern> desk_patterns() {
  return {MaskPattern::baseline(),         MaskPattern::koffset(1),
          MaskPattern::koffset(2),         MaskPattern::koffset(3),
          MaskPattern::koffset(4),         MaskPattern::multimask(1, 1, 0),
          MaskPattern::multimask(1, 2, 0), MaskPattern::multimask(1, 3, 0),
          MaskPattern::multimask(2, 1, 1), MaskPattern::multimask(2, 2, 0)};
}

PresetKey parse_preset_key(const std::string& name) {
  const auto dash = name.find('-');
  if (dash == std::string::npos) throw InvalidArgument("unknown preset \"" + name + "\"");
  const std::string model = name.substr(0, dash);
  const std::string task = name.substr(dash + 1);
  PresetKey key;
  if (model == "ul2") {
    key.model = ModelKind::kUl2Like;
  } else if (model == "t5") {
    key.model = ModelKind::kT5Like;
  } else {
    throw InvalidArgument("unknown preset model \"" + model + "\"");
  }
  if (task == "mmlu") {
    key.task = TaskKind::kMmluLike;
  } else if (task == "lambada") {
    key.task = TaskKind::kLambadaLike;
  } else if (task == "bigbench") {
    key.task = TaskKind::kBigBenchLike;
  } else {
    throw InvalidArgument("unknown preset task \"" + task + "\"");
  }
  return key;
}

std::vector<MaskPattern> parse_pattern_spec(const std::string& spec) {
  if (spec.rfind("preset:", 0) == 0) {
    const std::string name = spec.substr(7);
    if (name == "desk") return desk_patterns();
    return preset_patterns(parse_preset_key(name));
  }
  if (spec.rfind("file:", 0) == 0) {
    const std::string path = spec.substr(5);
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot read pattern file " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("pattern file " + path + ": " + e.what());
    }
    if (!j.is_array()) throw InvalidArgument("pattern file must hold a JSON array");
    std::vector<MaskPattern> out;
    for (const auto& item : j) {
      auto p = item.get<MaskPattern>();
      require_valid(validate(p), "MaskPattern");
      out.push_back(p);
    }
    if (out.empty()) throw InvalidArgument("pattern file is empty");
    return out;
  }
  throw InvalidArgument("pattern spec must start with preset: or file:");
}

std::uint64_t task_seed(std::uint64_t run_seed, const std::string& task_id) {
  return hash_combine(run_seed, hash_string(task_id));
}

Selection select_patterns(std::span<const TaskInstance> validation,
                          std::span<const MaskPattern> candidates, const Provider& provider,
                          std::size_t top, std::uint64_t seed) {
  if (validation.empty()) throw InvalidArgument("validation set is empty");
  if (top == 0 || top > candidates.size()) {
    throw InvalidArgument("top must lie in [1, number of candidate patterns]");
  }
  Selection sel;
  for (const auto& pattern : candidates) {
    PatternAccuracy acc{pattern, 0.0, 0};
    std::size_t correct = 0;
    for (const auto& task : validation) {
      MaskedQuery q;
      try {
        q = apply_pattern(task.context, pattern, task_seed(seed, task.id));
      } catch (const PatternDoesNotFit&) {
        continue;
      }
      const auto scores = score_candidates(provider, q, task.candidates);
      const auto best = static_cast<std::size_t>(
          std::max_element(scores.begin(), scores.end()) - scores.begin());
      correct += best == task.gold;
      ++acc.evaluated;
    }
    if (acc.evaluated == 0) {
      sel.warnings.push_back("pattern " + pattern.name() +
                             " inapplicable to every validation item; excluded");
      continue;
    }
    acc.accuracy = static_cast<double>(correct) / static_cast<double>(acc.evaluated);
    sel.scored.push_back(acc);
  }

  std::vector<PatternAccuracy> ranked = sel.scored;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.accuracy > b.accuracy; });
  const std::size_t keep = std::min(top, ranked.size());
  const auto is_baseline = [](const PatternAccuracy& a) {
    return a.pattern.kind == MaskPattern::Kind::kBaseline;
  };
  auto baseline = std::find_if(ranked.begin(), ranked.end(), is_baseline);
  if (baseline != ranked.end() && static_cast<std::size_t>(baseline - ranked.begin()) >= keep) {
    // Baseline displaces the weakest kept pattern.
    std::rotate(ranked.begin() + static_cast<std::ptrdiff_t>(keep) - 1, baseline, baseline + 1);
  }
  for (std::size_t i = 0; i < keep; ++i) sel.patterns.push_back(ranked[i].pattern);
  return sel;
}

}  // namespace mlmc::patterns
