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


#include "mlmc/harness.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "mlmc/bigram.hpp"
#include "mlmc/patterns.hpp"
#include "mlmc/random.hpp"
#include "mlmc/remote.hpp"

namespace mlmc::harness {

using nlohmann::json;
using namespace oracle;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kMaxReportedLines = 10;

std::string schema_message(const std::string& path,
                           const std::vector<std::pair<std::size_t, std::string>>& lines,
                           std::size_t total) {
  std::ostringstream os;
  os << path << ": " << total << " malformed line" << (total == 1 ? "" : "s");
  for (const auto& [line, msg] : lines) os << "\n  line " << line << ": " << msg;
  if (total > lines.size()) os << "\n  ...";
  return os.str();
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return in;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

template <typename T>
Loaded<T> load_jsonl(const fs::path& path, const char* kind) {
  auto in = open_input(path);
  Loaded<T> out;
  std::vector<std::pair<std::size_t, std::string>> bad;
  std::size_t total_bad = 0;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string error;
    try {
      T item = json::parse(line).get<T>();
      const auto violations = validate(item);
      if (violations.empty()) {
        out.items.push_back(std::move(item));
        continue;
      }
      error = describe(violations);
    } catch (const json::exception& e) {
      error = e.what();
    } catch (const InvalidArgument& e) {
      error = e.what();
    }
    ++total_bad;
    if (bad.size() < kMaxReportedLines) bad.emplace_back(number, error);
  }
  if (total_bad) throw SchemaError(path.string(), std::move(bad), total_bad);
  if (out.items.empty()) out.warnings.push_back(path.string() + ": no " + kind + " found");
  return out;
}

template <typename T>
void save_jsonl(const fs::path& path, std::span<const T> items) {
  auto out = open_output(path);
  for (const auto& item : items) out << json(item).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) return parts;
    start = pos + 1;
  }
}

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw InvalidArgument(what + ": cannot parse '" + text + "'");
  }
  return value;
}

// Rest of `parts` from index `from`, joined back with ':'.
std::string rest(const std::vector<std::string>& parts, std::size_t from) {
  std::string out;
  for (std::size_t i = from; i < parts.size(); ++i) {
    if (i > from) out += ':';
    out += parts[i];
  }
  return out;
}

std::shared_ptr<const JointTable> shared_joint(const std::string& spec,
                                               const std::string& fallback) {
  const std::string& chosen = spec.empty() ? fallback : spec;
  if (chosen.empty()) throw InvalidArgument("provider needs a joint (spec suffix or --joint)");
  return std::make_shared<const JointTable>(joint_from_spec(chosen));
}

const char* pooling_name(ensemble::Pooling p) {
  return p == ensemble::Pooling::kMax ? "max" : "average";
}

const char* policy_name(SeedPolicy p) { return p == SeedPolicy::kPerTask ? "per-task" : "fixed"; }

}  // namespace

SchemaError::SchemaError(const std::string& path,
                         std::vector<std::pair<std::size_t, std::string>> lines, std::size_t total)
    : InvalidArgument(schema_message(path, lines, total)), lines_(std::move(lines)), total_(total) {}

Loaded<TaskInstance> load_tasks(const fs::path& path) {
  return load_jsonl<TaskInstance>(path, "tasks");
}

Loaded<BigramQuadruple> load_quadruples(const fs::path& path) {
  return load_jsonl<BigramQuadruple>(path, "quadruples");
}

void save_tasks(const fs::path& path, std::span<const TaskInstance> tasks) {
  save_jsonl(path, tasks);
}

void save_quadruples(const fs::path& path, std::span<const BigramQuadruple> quads) {
  save_jsonl(path, quads);
}

// ---------------------------------------------------------------------------
// joints

JointTable load_joint(const fs::path& path) {
  auto in = open_input(path);
  try {
    const json j = json::parse(in);
    return JointTable::create(Vocabulary(j.at("vocab").get<std::vector<std::string>>()),
                              j.at("length").get<std::size_t>(),
                              j.at("probs").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

void save_joint(const fs::path& path, const JointTable& joint) {
  ordered_json j{{"vocab", joint.vocab().tokens()},
                 {"length", joint.length()},
                 {"probs", std::vector<double>(joint.probs().begin(), joint.probs().end())}};
  auto out = open_output(path);
  out << j.dump() << '\n';
}

JointTable joint_from_spec(const std::string& spec) {
  if (spec.find('=') == std::string::npos) return load_joint(spec);
  std::optional<std::size_t> v;
  std::optional<std::size_t> l;
  std::optional<std::uint64_t> seed;
  bool uniform = false;
  for (const auto& part : split(spec, ',')) {
    if (part == "uniform") {
      uniform = true;
      continue;
    }
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw InvalidArgument("joint spec: bad item '" + part + "'");
    const auto key = part.substr(0, eq);
    const auto value = part.substr(eq + 1);
    if (key == "v") {
      v = parse_number<std::size_t>(value, "joint spec v");
    } else if (key == "l") {
      l = parse_number<std::size_t>(value, "joint spec l");
    } else if (key == "seed") {
      seed = parse_number<std::uint64_t>(value, "joint spec seed");
    } else {
      throw InvalidArgument("joint spec: unknown key '" + key + "'");
    }
  }
  if (!v || !l) throw InvalidArgument("joint spec needs v= and l=");
  const auto vocab = Vocabulary::of_size(*v);
  if (uniform) return uniform_joint(vocab, *l);
  return random_joint(vocab, *l, seed.value_or(0));
}

// ---------------------------------------------------------------------------
// synthetic data

SequenceSampler::SequenceSampler(std::shared_ptr<const JointTable> joint)
    : joint_(std::move(joint)) {
  const auto p = joint_->probs();
  cdf_.resize(p.size());
  std::partial_sum(p.begin(), p.end(), cdf_.begin());
}

TokenSeq SequenceSampler::sample(std::uint64_t& state) const {
  state = splitmix64(state);
  const double u = bits_to_unit(state) * cdf_.back();
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.end()) --it;
  // Skip zero-mass entries that share the cumulative value.
  auto index = static_cast<std::size_t>(it - cdf_.begin());
  while (joint_->probs()[index] == 0.0 && index + 1 < cdf_.size()) ++index;
  return joint_->sequence_at(index);
}

std::vector<TaskInstance> synth_tasks(std::shared_ptr<const JointTable> joint, std::size_t n,
                                      std::size_t candidates_per_task, std::uint64_t seed) {
  if (!joint) throw InvalidArgument("null joint");
  if (candidates_per_task < 2) throw InvalidArgument("candidates_per_task must be >= 2");
  if (candidates_per_task > joint->vocab_size()) {
    throw InvalidArgument("vocabulary of " + std::to_string(joint->vocab_size()) +
                          " tokens cannot supply " + std::to_string(candidates_per_task) +
                          " distinct candidates");
  }
  if (joint->length() < 2) throw InvalidArgument("synthetic tasks need length >= 2");
  const std::size_t last = joint->length() - 1;
  const SequenceSampler sampler(joint);
  std::uint64_t state = hash_combine(seed, hash_string("synth-tasks"));
  Rng rng(hash_combine(seed, hash_string("synth-candidates")));

  std::vector<TaskInstance> out;
  out.reserve(n);
  const std::array<std::size_t, 1> target{last};
  for (std::size_t i = 0; i < n; ++i) {
    TokenSeq seq = sampler.sample(state);
    seq.pop_back();
    Assignment a(joint->length());
    for (std::size_t p = 0; p < last; ++p) a[p] = seq[p];
    const auto cond = condition(*joint, a, target);
    const auto gold = static_cast<TokenId>(
        std::max_element(cond.probs.begin(), cond.probs.end()) - cond.probs.begin());

    std::vector<TokenId> pool;
    for (TokenId t = 0; t < joint->vocab_size(); ++t) {
      if (t != gold) pool.push_back(t);
    }
    std::vector<TokenSeq> cands{{gold}};
    for (std::size_t k = 1; k < candidates_per_task; ++k) {
      const auto pick = k - 1 + rng.below(pool.size() - (k - 1));
      std::swap(pool[k - 1], pool[pick]);
      cands.push_back({pool[k - 1]});
    }
    for (std::size_t k = cands.size() - 1; k > 0; --k) {
      std::swap(cands[k], cands[rng.below(k + 1)]);
    }
    std::size_t gold_index = 0;
    while (cands[gold_index][0] != gold) ++gold_index;
    out.push_back(make_task("synth-" + std::to_string(i), std::move(seq), std::move(cands),
                            gold_index));
  }
  return out;
}

std::vector<BigramQuadruple> synth_quadruples(std::shared_ptr<const JointTable> joint,
                                              std::size_t n, std::uint64_t seed) {
  if (!joint) throw InvalidArgument("null joint");
  if (joint->length() < 2) throw InvalidArgument("quadruples need length >= 2");
  const std::size_t v = joint->vocab_size();
  const SequenceSampler sampler(joint);
  std::uint64_t state = hash_combine(seed, hash_string("synth-quadruples"));
  Rng rng(hash_combine(seed, hash_string("synth-alternatives")));
  std::vector<BigramQuadruple> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    TokenSeq seq = sampler.sample(state);
    const std::size_t slot = rng.below(seq.size() - 1);
    const TokenId x11 = seq[slot];
    const TokenId x21 = seq[slot + 1];
    const auto x12 = static_cast<TokenId>((x11 + 1 + rng.below(v - 1)) % v);
    const auto x22 = static_cast<TokenId>((x21 + 1 + rng.below(v - 1)) % v);
    out.push_back(make_quadruple(std::move(seq), slot, x11, x12, x21, x22));
  }
  return out;
}

std::vector<TokenSeq> lambada_candidates(const Provider& provider, const TokenSeq& context,
                                         std::size_t target_count) {
  if (target_count < 2) throw InvalidArgument("target_count must be >= 2");
  const auto cap = provider.capability();
  if (!cap.vocab_size) throw InvalidArgument("provider does not report its vocabulary size");
  const std::size_t v = *cap.vocab_size;
  if (target_count > v) throw InvalidArgument("target_count exceeds the vocabulary size");
  std::vector<TokenSeq> all;
  all.reserve(v);
  for (TokenId t = 0; t < v; ++t) all.push_back({t});
  const auto query = patterns::apply_pattern(context, MaskPattern::baseline(), 0);
  const auto scores = score_candidates(provider, query, all);
  std::vector<std::size_t> order(v);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<TokenSeq> out;
  for (std::size_t i = 0; i < target_count; ++i) out.push_back(all[order[i]]);
  return out;
}

// ---------------------------------------------------------------------------
// providers

std::shared_ptr<const Provider> make_provider(const std::string& spec,
                                              const std::string& default_joint) {
  const auto parts = split(spec, ':');
  const auto& kind = parts[0];
  if (kind == "oracle") {
    return consistent_provider(shared_joint(rest(parts, 1), default_joint));
  }
  if (kind == "perturbed") {
    if (parts.size() < 3) throw InvalidArgument("perturbed spec: perturbed:<sigma>:<seed>[:<joint>]");
    NoiseSpec noise{parse_number<double>(parts[1], "sigma"),
                    parse_number<std::uint64_t>(parts[2], "seed")};
    if (!(noise.sigma >= 0.0)) throw InvalidArgument("sigma must be >= 0");
    return perturbed_provider(shared_joint(rest(parts, 3), default_joint), noise);
  }
  if (kind == "confidence") {
    if (parts.size() < 5) {
      throw InvalidArgument(
          "confidence spec: confidence:<sigma>:<shrink>:<sharpen>:<seed>[:<joint>]");
    }
    NoiseSpec noise{parse_number<double>(parts[1], "sigma"),
                    parse_number<std::uint64_t>(parts[4], "seed")};
    return std::make_shared<ConfidenceNoiseProvider>(
        shared_joint(rest(parts, 5), default_joint), noise, parse_number<double>(parts[2], "shrink"),
        parse_number<double>(parts[3], "sharpen"));
  }
  if (kind == "remote") {
    std::string url = rest(parts, 1);
    if (const char* env = std::getenv(remote::kEndpointEnv); env && *env) url = env;
    if (url.empty()) throw InvalidArgument("remote spec needs a URL");
    auto client = std::make_shared<const remote::Client>(remote::parse_endpoint(url));
    return std::make_shared<remote::RemoteProvider>(client);
  }
  throw InvalidArgument("unknown provider spec '" + spec + "'");
}

// ---------------------------------------------------------------------------
// configuration

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j{{"provider", c.provider},
                 {"joint", c.joint},
                 {"patterns", c.patterns},
                 {"tasks", c.tasks},
                 {"m", std::to_string(c.m.lo) + ".." + std::to_string(c.m.hi)},
                 {"seed", c.seed},
                 {"out_dir", c.out_dir},
                 {"jobs", c.jobs},
                 {"experiments", ordered_json{{"disagree", c.disagree}, {"eoc", c.eoc}}},
                 {"length_normalize", c.length_normalize},
                 {"renormalize_candidates", c.renormalize_candidates},
                 {"pairwise_normalize", c.pairwise_normalize},
                 {"pooling", pooling_name(c.pooling)},
                 {"min_baseline_accuracy", nullptr},
                 {"matrix_cap", c.matrix_cap},
                 {"seed_policy", policy_name(c.seed_policy)}};
  if (c.min_baseline_accuracy) j["min_baseline_accuracy"] = *c.min_baseline_accuracy;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  static const std::set<std::string> known{
      "provider", "joint",       "patterns",           "tasks",
      "m",        "seed",        "out_dir",            "jobs",
      "experiments", "length_normalize", "renormalize_candidates", "pairwise_normalize",
      "pooling",  "min_baseline_accuracy", "matrix_cap", "seed_policy"};
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InvalidArgument("config: unknown field '" + key + "'");
  }
  ExperimentConfig c;
  try {
    c.provider = j.at("provider").get<std::string>();
    c.joint = j.value("joint", c.joint);
    c.patterns = j.value("patterns", c.patterns);
    c.tasks = j.at("tasks").get<std::vector<std::string>>();
    if (j.contains("m")) {
      c.m = j.at("m").is_string() ? metrics::parse_m_range(j.at("m").get<std::string>())
                                  : metrics::MRange{j.at("m").get<std::size_t>(),
                                                    j.at("m").get<std::size_t>()};
    }
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.jobs = j.value("jobs", c.jobs);
    if (j.contains("experiments")) {
      const auto& e = j.at("experiments");
      c.disagree = e.value("disagree", c.disagree);
      c.eoc = e.value("eoc", c.eoc);
    }
    c.length_normalize = j.value("length_normalize", c.length_normalize);
    c.renormalize_candidates = j.value("renormalize_candidates", c.renormalize_candidates);
    c.pairwise_normalize = j.value("pairwise_normalize", c.pairwise_normalize);
    const auto pooling = j.value("pooling", std::string("max"));
    if (pooling == "max") {
      c.pooling = ensemble::Pooling::kMax;
    } else if (pooling == "average") {
      c.pooling = ensemble::Pooling::kAverage;
    } else {
      throw InvalidArgument("config: pooling must be max or average");
    }
    if (j.contains("min_baseline_accuracy") && !j.at("min_baseline_accuracy").is_null()) {
      c.min_baseline_accuracy = j.at("min_baseline_accuracy").get<double>();
    }
    c.matrix_cap = j.value("matrix_cap", c.matrix_cap);
    const auto policy = j.value("seed_policy", std::string("per-task"));
    if (policy == "per-task") {
      c.seed_policy = SeedPolicy::kPerTask;
    } else if (policy == "fixed") {
      c.seed_policy = SeedPolicy::kFixed;
    } else {
      throw InvalidArgument("config: seed_policy must be per-task or fixed");
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  if (c.jobs == 0) throw InvalidArgument("config: jobs must be >= 1");
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  auto in = open_input(path);
  try {
    return config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// output

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::logic_error("to_chars failed");
  return std::string(buf, ptr);
}

std::string disagreement_csv(const metrics::DisagreementCurve& curve) {
  std::string out = "m,rate,subsets,instances,skipped\n";
  for (const auto& p : curve.points) {
    out += std::to_string(p.m) + ',' + format_double(p.rate) + ',' + std::to_string(p.subsets) +
           ',' + std::to_string(p.instances) + ',' + std::to_string(p.skipped) + '\n';
  }
  return out;
}

std::string accuracy_csv(const ensemble::AccuracyCurve& curve) {
  std::string out = "m,mean_accuracy,min_accuracy,max_accuracy,baseline_accuracy\n";
  const std::string base =
      curve.baseline_accuracy ? format_double(*curve.baseline_accuracy) : std::string();
  for (const auto& p : curve.points) {
    out += std::to_string(p.m) + ',' + format_double(p.mean) + ',' + format_double(p.min) + ',' +
           format_double(p.max) + ',' + base + '\n';
  }
  return out;
}

namespace {

ordered_json curve_json(const metrics::DisagreementCurve& c) {
  ordered_json points = ordered_json::array();
  for (const auto& p : c.points) {
    points.push_back({{"m", p.m},
                      {"rate", p.rate},
                      {"subsets", p.subsets},
                      {"instances", p.instances},
                      {"skipped", p.skipped},
                      {"evaluated", p.evaluated},
                      {"disagreeing", p.disagreeing}});
  }
  return {{"points", points}, {"errors", c.errors}};
}

ordered_json curve_json(const ensemble::AccuracyCurve& c) {
  ordered_json points = ordered_json::array();
  for (const auto& p : c.points) {
    points.push_back({{"m", p.m},
                      {"mean", p.mean},
                      {"min", p.min},
                      {"max", p.max},
                      {"subsets", p.subsets},
                      {"instances", p.instances}});
  }
  ordered_json j{{"points", points}, {"baseline_accuracy", nullptr}, {"errors", c.errors}};
  if (c.baseline_accuracy) j["baseline_accuracy"] = *c.baseline_accuracy;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

ordered_json to_json(const RunRecord& r) {
  ordered_json files = ordered_json::array();
  for (const auto& f : r.files) {
    ordered_json entry{{"path", f.path},
                       {"instances", f.instances},
                       {"errors", f.errors},
                       {"baseline_accuracy", nullptr},
                       {"excluded", f.excluded}};
    if (f.baseline_accuracy) entry["baseline_accuracy"] = *f.baseline_accuracy;
    files.push_back(entry);
  }
  ordered_json j{{"tool_version", kToolVersion},
                 {"config", to_json(r.config)},
                 {"seeds", ordered_json{{"run", r.config.seed},
                                        {"policy", policy_name(r.config.seed_policy)}}},
                 {"files", files},
                 {"disagreement", nullptr},
                 {"accuracy", nullptr},
                 {"warnings", r.warnings},
                 {"outputs", r.outputs},
                 {"seconds", r.seconds},
                 {"matrices_included", r.matrices_included}};
  if (r.disagreement) j["disagreement"] = curve_json(*r.disagreement);
  if (r.accuracy) j["accuracy"] = curve_json(*r.accuracy);
  if (r.matrices_included) j["matrices"] = r.matrices;
  return j;
}

RunRecord run_experiment(const ExperimentConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  RunRecord record;
  record.config = config;

  // Everything that can be rejected up front is checked before scoring.
  if (config.tasks.empty()) throw InvalidArgument("config lists no task files");
  for (const auto& path : config.tasks) {
    if (!fs::exists(path)) throw IoError("task file not found: " + path);
  }
  if (!config.disagree && !config.eoc) throw InvalidArgument("no experiment selected");
  const auto patterns = patterns::parse_pattern_spec(config.patterns);
  metrics::check_m_range(config.m, patterns.size());
  const auto provider = make_provider(config.provider, config.joint);

  ScoringOptions options{config.length_normalize, config.renormalize_candidates};
  std::vector<std::vector<ScoredInstance>> per_file;
  std::size_t total = 0;
  std::size_t errors = 0;
  for (const auto& path : config.tasks) {
    auto loaded = load_tasks(path);
    for (auto& w : loaded.warnings) record.warnings.push_back(std::move(w));
    auto scored = score_tasks(loaded.items, *provider, patterns, config.seed, options,
                              config.jobs, config.seed_policy);
    FileOutcome outcome;
    outcome.path = path;
    outcome.instances = scored.size();
    for (const auto& s : scored) outcome.errors += s.error.has_value();
    outcome.baseline_accuracy = ensemble::baseline_accuracy(scored);
    if (config.min_baseline_accuracy &&
        !(outcome.baseline_accuracy.value_or(0.0) > *config.min_baseline_accuracy)) {
      outcome.excluded = true;
      record.warnings.push_back(path + ": excluded, Baseline accuracy not above threshold");
    }
    total += outcome.instances;
    errors += outcome.errors;
    record.files.push_back(outcome);
    per_file.push_back(std::move(scored));
  }

  const fs::path out_dir(config.out_dir);
  fs::create_directories(out_dir);
  auto write_record = [&] {
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_text(out_dir / "run_record.json", to_json(record).dump(2) + "\n");
  };

  if (total > 0 && errors * 100 > total) {
    record.warnings.push_back(std::to_string(errors) + " of " + std::to_string(total) +
                              " instances failed to score");
    write_record();
    throw RunFailed(std::to_string(errors) + " of " + std::to_string(total) +
                    " instances failed to score (budget 1%)");
  }

  std::vector<ScoredInstance> pooled;
  std::vector<std::size_t> included;
  for (std::size_t f = 0; f < per_file.size(); ++f) {
    if (record.files[f].excluded) continue;
    included.push_back(f);
    pooled.insert(pooled.end(), per_file[f].begin(), per_file[f].end());
  }
  if (included.empty()) {
    write_record();
    throw RunFailed("every task file was excluded by the accuracy filter");
  }

  std::size_t entries = 0;
  for (const auto& s : pooled) {
    if (s.scores) entries += s.scores->rows.size() * s.scores->num_candidates();
  }
  if (entries <= config.matrix_cap) {
    record.matrices_included = true;
    record.matrices = json::array();
    for (const auto& s : pooled) {
      json entry{{"id", s.id}, {"gold", s.gold}};
      if (s.scores) entry["scores"] = *s.scores;
      if (s.error) entry["error"] = *s.error;
      record.matrices.push_back(std::move(entry));
    }
  }

  auto stem = [&](std::size_t f) { return fs::path(config.tasks[f]).stem().string(); };
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(out_dir / name, text);
    record.outputs.push_back(name);
  };
  const bool multi = included.size() > 1;

  if (config.disagree) {
    record.disagreement = metrics::disagreement_curve(pooled, patterns.size(), config.m);
    emit("disagreement.csv", disagreement_csv(*record.disagreement));
    if (multi) {
      std::vector<metrics::DisagreementCurve> curves;
      for (std::size_t f : included) {
        curves.push_back(metrics::disagreement_curve(per_file[f], patterns.size(), config.m));
        emit("disagreement." + stem(f) + ".csv", disagreement_csv(curves.back()));
      }
      emit("disagreement.macro.csv", disagreement_csv(metrics::macro_average(curves)));
    }
  }
  if (config.eoc) {
    record.accuracy =
        ensemble::eoc_accuracy_curve(pooled, patterns.size(), config.m, config.pooling);
    emit("eoc.csv", accuracy_csv(*record.accuracy));
    if (multi) {
      std::vector<ensemble::AccuracyCurve> curves;
      for (std::size_t f : included) {
        curves.push_back(
            ensemble::eoc_accuracy_curve(per_file[f], patterns.size(), config.m, config.pooling));
        emit("eoc." + stem(f) + ".csv", accuracy_csv(curves.back()));
      }
      emit("eoc.macro.csv", accuracy_csv(ensemble::macro_average(curves)));
    }
  }
  write_record();
  return record;
}

// ---------------------------------------------------------------------------
// oracle invariant suite

nlohmann::ordered_json oracle_check(std::size_t vocab, std::size_t len, std::size_t joints,
                                    std::uint64_t seed) {
  if (vocab < 2 || len < 2) throw InvalidArgument("oracle-check needs vocab >= 2 and len >= 2");
  if (!table_size(vocab, len)) throw InvalidArgument("joint table too large");
  if (joints == 0) throw InvalidArgument("oracle-check needs at least one joint");

  struct Check {
    const char* name;
    double tolerance;
    double max_error = 0.0;
    std::size_t cases = 0;
  };
  Check normalization{"conditional_normalization", 1e-12};
  Check invariance{"pattern_invariance_tv", 1e-9};
  Check cross_ratio{"cross_ratio_residual", 1e-9};
  Check round_trip{"solve_one_round_trip", 1e-9};
  Check zero_noise{"zero_noise_identity", 0.0};

  const auto vocabulary = Vocabulary::of_size(vocab);
  const auto pats = patterns::desk_patterns();
  std::vector<TokenSeq> all;
  for (TokenId t = 0; t < vocab; ++t) all.push_back({t});

  for (std::size_t i = 0; i < joints; ++i) {
    const auto joint_seed = hash_combine(seed, i);
    auto joint =
        std::make_shared<const JointTable>(random_joint(vocabulary, len, joint_seed));
    const auto exact = consistent_provider(joint);
    const auto silent = perturbed_provider(joint, NoiseSpec{0.0, joint_seed});
    for (const auto& task : synth_tasks(joint, 4, 2, joint_seed)) {
      std::vector<double> base;
      for (const auto& p : pats) {
        MaskedQuery q;
        try {
          q = patterns::apply_pattern(task.context, p, patterns::task_seed(seed, task.id));
        } catch (const patterns::PatternDoesNotFit&) {
          continue;
        }
        const auto lp = score_candidates(*exact, q, all);
        std::vector<double> probs(lp.size());
        std::transform(lp.begin(), lp.end(), probs.begin(), [](double x) { return std::exp(x); });
        double sum = 0.0;
        for (double x : probs) sum += x;
        normalization.max_error = std::max(normalization.max_error, std::abs(sum - 1.0));
        ++normalization.cases;
        if (base.empty()) {
          base = probs;
        } else {
          invariance.max_error = std::max(invariance.max_error, total_variation(base, probs));
          ++invariance.cases;
        }
        const auto noisy = score_candidates(*silent, q, all);
        for (std::size_t k = 0; k < lp.size(); ++k) {
          if (noisy[k] != lp[k]) zero_noise.max_error = std::max(zero_noise.max_error,
                                                                 std::abs(noisy[k] - lp[k]));
        }
        ++zero_noise.cases;
      }
    }
    for (const auto& quad : synth_quadruples(joint, 8, joint_seed)) {
      cross_ratio.max_error = std::max(cross_ratio.max_error, verify_cross_ratio(*joint, quad));
      ++cross_ratio.cases;
      const auto eight = exact_conditionals(*joint, quad);
      for (std::size_t k = 0; k < 8; ++k) {
        round_trip.max_error = std::max(
            round_trip.max_error, metrics::log_prob_gap(bigram::solve_one(eight, k), eight[k]));
      }
      ++round_trip.cases;
    }
  }

  ordered_json checks = ordered_json::array();
  bool all_pass = true;
  for (const Check* c : {&normalization, &invariance, &cross_ratio, &round_trip, &zero_noise}) {
    const bool pass = c->max_error <= c->tolerance;
    all_pass &= pass;
    checks.push_back({{"name", c->name},
                      {"passed", pass},
                      {"max_error", c->max_error},
                      {"tolerance", c->tolerance},
                      {"cases", c->cases}});
  }
  return {{"vocab", vocab}, {"len", len},        {"joints", joints},
          {"seed", seed},   {"checks", checks}, {"passed", all_pass}};
}

}  // namespace mlmc::harness
