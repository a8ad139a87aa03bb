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

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mlmc/core.hpp"
#include "mlmc/provider.hpp"

namespace mlmc::patterns {

class PatternDoesNotFit : public Error {
 public:
  PatternDoesNotFit(const MaskPattern& pattern, std::size_t context_length,
                    std::size_t required_length);

  std::size_t context_length() const { return context_length_; }
  std::size_t required_length() const { return required_length_; }

 private:
  std::size_t context_length_;
  std::size_t required_length_;
};

enum class ModelKind { kUl2Like, kT5Like };
enum class TaskKind { kMmluLike, kLambadaLike, kBigBenchLike };

struct PresetKey {
  ModelKind model = ModelKind::kUl2Like;
  TaskKind task = TaskKind::kMmluLike;
};

// Minimum context length a pattern needs.
std::size_t required_length(const MaskPattern& pattern);

// Builds the masked query for one pattern. Multimask span placement is a
// uniform pick among all feasible placements, driven by `seed`.
MaskedQuery apply_pattern(const TokenSeq& context, const MaskPattern& pattern,
                          std::uint64_t seed);

// Ten patterns per (model, task): Baseline, then K-offsets, then Multimasks.
std::vector<MaskPattern> preset_patterns(PresetKey key);

// Ten small patterns that fit any context of at least five tokens, for
// synthetic desk-scale experiments.
std::vector<MaskPattern> desk_patterns();

// Parses "preset:ul2-lambada", "preset:desk" or "file:<path>" (a JSON array
// of pattern objects).
std::vector<MaskPattern> parse_pattern_spec(const std::string& spec);
PresetKey parse_preset_key(const std::string& name);

struct PatternAccuracy {
  MaskPattern pattern;
  double accuracy = 0.0;
  std::size_t evaluated = 0;
};

struct Selection {
  std::vector<MaskPattern> patterns;
  std::vector<PatternAccuracy> scored;  // every applicable candidate, list order
  std::vector<std::string> warnings;
};

// Ranks candidate patterns by single-conditional accuracy on validation
// tasks and keeps the best `top`, always retaining Baseline. Ties keep list
// order.
Selection select_patterns(std::span<const TaskInstance> validation,
                          std::span<const MaskPattern> candidates, const Provider& provider,
                          std::size_t top, std::uint64_t seed);

// Per-task seed: mixes the run seed with the task id.
std::uint64_t task_seed(std::uint64_t run_seed, const std::string& task_id);

}  // namespace mlmc::patterns
