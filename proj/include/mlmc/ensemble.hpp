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

// Ensemble of Conditionals: pick the (pattern, candidate) cell with the
// highest score across the included conditionals.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mlmc/core.hpp"
#include "mlmc/metrics.hpp"
#include "mlmc/provider.hpp"

namespace mlmc::ensemble {

enum class Pooling {
  kMax,      // argmax over all cells
  kAverage,  // argmax of the per-candidate mean probability (comparison only)
};

struct EocPrediction {
  std::size_t pattern = 0;    // winning row
  std::size_t candidate = 0;  // winning column
  double log_p = 0.0;
};

// Ties go to the lowest row, then the lowest column. Average pooling reports
// the lowest included row as the pattern and the log of the mean probability.
EocPrediction eoc_predict(const CandidateScores& scores, std::span<const std::size_t> subset,
                          Pooling pooling = Pooling::kMax);

struct AccuracyPoint {
  std::size_t m = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::uint64_t subsets = 0;  // subsets with at least one evaluable instance
  std::size_t instances = 0;
  std::vector<double> per_subset;  // ascending bitmask order
};

struct AccuracyCurve {
  std::vector<AccuracyPoint> points;
  std::optional<double> baseline_accuracy;
  std::size_t errors = 0;
};

AccuracyCurve eoc_accuracy_curve(std::span<const ScoredInstance> instances,
                                 std::size_t num_patterns, metrics::MRange m_range,
                                 Pooling pooling = Pooling::kMax);

AccuracyCurve eoc_accuracy_curve(std::span<const TaskInstance> tasks, const Provider& provider,
                                 std::span<const MaskPattern> patterns, metrics::MRange m_range,
                                 std::uint64_t seed, const ScoringOptions& options = {},
                                 std::size_t jobs = 1, Pooling pooling = Pooling::kMax);

// Accuracy of the first Baseline row on its own; nullopt without a Baseline
// row or without any instance where it is present.
std::optional<double> baseline_accuracy(std::span<const ScoredInstance> instances);

// Unweighted mean of per-file curves.
AccuracyCurve macro_average(std::span<const AccuracyCurve> curves);

}  // namespace mlmc::ensemble
