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

// Task and quadruple files, synthetic data from oracle joints, provider
// construction from spec strings, and experiment orchestration.
//
// Provider specs:
//   oracle[:<joint>]
//   perturbed:<sigma>:<seed>[:<joint>]
//   confidence:<sigma>:<shrink>:<sharpen>:<seed>[:<joint>]
//   remote:<url>
// A <joint> is a JSON file path or "v=<V>,l=<L>,seed=<S>" for a random
// flat-Dirichlet joint ("uniform" instead of a seed gives the uniform joint).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlmc/core.hpp"
#include "mlmc/ensemble.hpp"
#include "mlmc/metrics.hpp"
#include "mlmc/oracle.hpp"
#include "mlmc/provider.hpp"

namespace mlmc::harness {

using oracle::JointTable;

inline constexpr const char* kToolVersion = "0.1.0";

class IoError : public Error {
 public:
  using Error::Error;
};

// Schema violations in a JSONL file; keeps at most the first 10 offending
// lines as (1-based line number, message).
class SchemaError : public InvalidArgument {
 public:
  SchemaError(const std::string& path, std::vector<std::pair<std::size_t, std::string>> lines,
              std::size_t total);

  const std::vector<std::pair<std::size_t, std::string>>& lines() const { return lines_; }
  std::size_t total() const { return total_; }

 private:
  std::vector<std::pair<std::size_t, std::string>> lines_;
  std::size_t total_;
};

// A run failed its error budget or an invariant check.
class RunFailed : public Error {
 public:
  using Error::Error;
};

template <typename T>
struct Loaded {
  std::vector<T> items;
  std::vector<std::string> warnings;
};

Loaded<TaskInstance> load_tasks(const std::filesystem::path& path);
Loaded<BigramQuadruple> load_quadruples(const std::filesystem::path& path);
void save_tasks(const std::filesystem::path& path, std::span<const TaskInstance> tasks);
void save_quadruples(const std::filesystem::path& path, std::span<const BigramQuadruple> quads);

// {"vocab": [...], "length": L, "probs": [...]}
JointTable load_joint(const std::filesystem::path& path);
void save_joint(const std::filesystem::path& path, const JointTable& joint);
JointTable joint_from_spec(const std::string& spec);

// Draws full sequences from the joint by inverse CDF.
class SequenceSampler {
 public:
  explicit SequenceSampler(std::shared_ptr<const JointTable> joint);
  TokenSeq sample(std::uint64_t& state) const;

 private:
  std::shared_ptr<const JointTable> joint_;
  std::vector<double> cdf_;
};

// Contexts are the first L-1 positions of sampled sequences; the gold
// candidate is the argmax of the exact last-position conditional (ties to the
// lowest token), distractors are drawn without replacement, and candidate
// order is shuffled. Ids are "synth-<i>".
std::vector<TaskInstance> synth_tasks(std::shared_ptr<const JointTable> joint, std::size_t n,
                                      std::size_t candidates_per_task, std::uint64_t seed);

// Sequence and slot sampled from the joint; x11, x21 come from the sequence
// and x12 != x11, x22 != x21 are drawn uniformly.
std::vector<BigramQuadruple> synth_quadruples(std::shared_ptr<const JointTable> joint,
                                              std::size_t n, std::uint64_t seed);

inline constexpr std::size_t kDefaultLambadaCandidates = 5;

// Top `target_count` single tokens under the Baseline conditional; ties keep
// the lower token id. Requires the provider to report its vocabulary size.
std::vector<TokenSeq> lambada_candidates(const Provider& provider, const TokenSeq& context,
                                         std::size_t target_count = kDefaultLambadaCandidates);

// `default_joint` is used by oracle-backed specs that name no joint. The
// endpoint environment variable replaces the URL of remote specs.
std::shared_ptr<const Provider> make_provider(const std::string& spec,
                                              const std::string& default_joint = "");

struct ExperimentConfig {
  std::string provider;
  std::string joint;  // default joint for oracle-backed providers
  std::string patterns = "preset:desk";
  std::vector<std::string> tasks;
  metrics::MRange m{2, 2};
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  std::size_t jobs = 1;
  bool disagree = true;
  bool eoc = true;
  bool length_normalize = false;
  bool renormalize_candidates = false;
  bool pairwise_normalize = false;
  ensemble::Pooling pooling = ensemble::Pooling::kMax;
  std::optional<double> min_baseline_accuracy;
  std::size_t matrix_cap = 1'000'000;
  SeedPolicy seed_policy = SeedPolicy::kPerTask;
};

nlohmann::ordered_json to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

struct FileOutcome {
  std::string path;
  std::size_t instances = 0;
  std::size_t errors = 0;
  std::optional<double> baseline_accuracy;
  bool excluded = false;
};

struct RunRecord {
  ExperimentConfig config;
  std::vector<FileOutcome> files;
  std::optional<metrics::DisagreementCurve> disagreement;
  std::optional<ensemble::AccuracyCurve> accuracy;
  std::vector<std::string> warnings;
  std::vector<std::string> outputs;  // files written, relative to out_dir
  double seconds = 0.0;
  bool matrices_included = false;
  nlohmann::json matrices;  // per-instance score matrices when under the cap
};

nlohmann::ordered_json to_json(const RunRecord& record);

// Validates the config and builds the provider before any scoring, runs the
// requested curves and writes CSVs plus run_record.json into out_dir. Throws
// RunFailed when more than 1% of instances fail to score.
RunRecord run_experiment(const ExperimentConfig& config);

// CSV renderings; numbers use the shortest round-trip form.
std::string disagreement_csv(const metrics::DisagreementCurve& curve);
std::string accuracy_csv(const ensemble::AccuracyCurve& curve);
std::string format_double(double v);

// Invariant suite over `joints` random joints of shape (vocab, len).
nlohmann::ordered_json oracle_check(std::size_t vocab, std::size_t len, std::size_t joints,
                                    std::uint64_t seed);

}  // namespace mlmc::harness
