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


// Command-line front end for the consistency diagnostics.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlmc/bigram.hpp"
#include "mlmc/counting.hpp"
#include "mlmc/ensemble.hpp"
#include "mlmc/harness.hpp"
#include "mlmc/metrics.hpp"
#include "mlmc/patterns.hpp"
#include "mlmc/remote.hpp"

namespace {

using namespace mlmc;
using nlohmann::ordered_json;

constexpr int kExitError = 1;
constexpr int kExitCheckFailed = 3;

struct Globals {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out;
};

void emit(const Globals& g, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(g.out, std::ios::binary);
  if (!f) throw harness::IoError("cannot write " + g.out);
  f << text;
}

std::vector<TaskInstance> load_all(const std::vector<std::string>& paths) {
  std::vector<TaskInstance> all;
  for (const auto& p : paths) {
    auto loaded = harness::load_tasks(p);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
    all.insert(all.end(), loaded.items.begin(), loaded.items.end());
  }
  return all;
}

ordered_json serve_check(const std::string& url, int timeout_ms) {
  remote::ClientOptions options;
  options.timeout = std::chrono::milliseconds(timeout_ms);
  options.retries = 1;
  const remote::Client client(remote::parse_endpoint(url), options);
  ordered_json report{{"endpoint", url}};
  const auto info = client.info();
  report["model_id"] = info.model_id;
  report["max_len"] = info.max_len;
  report["styles"] = info.styles;

  remote::ScoreRequest probe;
  probe.encoder_tokens = {0, -1};
  probe.candidates = {{0}, {1}};
  const auto raw = client.score(probe);
  probe.normalize = true;
  const auto normalized = client.score(probe);
  double mass = 0.0;
  for (double v : normalized.log_probs) mass += std::exp(v);
  const bool pass = raw.log_probs.size() == 2 && std::abs(mass - 1.0) < 1e-9;
  report["probe_log_probs"] = raw.log_probs;
  report["normalized_mass"] = mass;
  report["passed"] = pass;
  return report;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked language model consistency diagnostics"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Run seed");
  app.add_option("--jobs", g.jobs, "Parallel scoring threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output file (stdout when omitted)");

  // count
  auto* count = app.add_subcommand("count", "Count MLM conditionals against joint degrees of freedom");
  std::size_t vocab = 0;
  std::size_t len = 0;
  std::size_t k = 1;
  count->add_option("--vocab", vocab, "Vocabulary size")->required();
  count->add_option("--len", len, "Sequence length")->required();
  count->add_option("--k", k, "Masked positions per conditional");

  // oracle-check
  auto* check = app.add_subcommand("oracle-check", "Run the oracle invariant suite");
  std::size_t joints = 10;
  check->add_option("--vocab", vocab)->required();
  check->add_option("--len", len)->required();
  check->add_option("--joints", joints, "Random joints to test");

  // disagree / eoc
  std::vector<std::string> tasks;
  std::string provider_spec;
  std::string joint_spec;
  std::string pattern_spec = "preset:desk";
  std::string m_text;
  bool length_normalize = false;
  bool renormalize = false;
  std::string pooling = "max";
  auto add_scoring = [&](CLI::App* sub) {
    sub->add_option("--tasks", tasks, "Task JSONL files")->required();
    sub->add_option("--provider", provider_spec, "Provider spec")->required();
    sub->add_option("--joint", joint_spec, "Default joint for oracle providers");
    sub->add_option("--patterns", pattern_spec, "Pattern spec");
    sub->add_option("--m", m_text, "Subset sizes, e.g. 2..10")->required();
    sub->add_flag("--length-normalize", length_normalize);
    sub->add_flag("--renormalize", renormalize, "Renormalize over candidates");
  };
  auto* disagree = app.add_subcommand("disagree", "Disagreement rate versus subset size");
  add_scoring(disagree);
  auto* eoc = app.add_subcommand("eoc", "Ensemble-of-conditionals accuracy versus subset size");
  add_scoring(eoc);
  eoc->add_option("--pooling", pooling)->check(CLI::IsMember({"max", "average"}));

  // bigram
  auto* bigram = app.add_subcommand("bigram", "Bigram quadruple compatibility gaps");
  std::string quads_path;
  std::string mode = "single";
  bool pairwise = false;
  bigram->add_option("--quads", quads_path, "Quadruple JSONL")->required();
  bigram->add_option("--provider", provider_spec)->required();
  bigram->add_option("--joint", joint_spec);
  bigram->add_option("--mode", mode)->check(CLI::IsMember({"single", "both"}));
  bigram->add_flag("--pairwise-normalize", pairwise);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate joints, tasks or quadruples");
  std::string what = "tasks";
  std::size_t n = 100;
  std::size_t candidates = 4;
  synth->add_option("--what", what)->check(CLI::IsMember({"joint", "tasks", "quads"}));
  synth->add_option("--joint", joint_spec, "Joint spec or file");
  synth->add_option("--vocab", vocab);
  synth->add_option("--len", len);
  synth->add_option("--n", n);
  synth->add_option("--candidates", candidates);

  // serve-check
  auto* sc = app.add_subcommand("serve-check", "Probe a scoring server");
  std::string endpoint;
  int timeout_ms = 120000;
  sc->add_option("--endpoint", endpoint, "Server URL (defaults to the environment override)");
  sc->add_option("--timeout", timeout_ms, "Milliseconds");

  // serve-oracle
  auto* so = app.add_subcommand("serve-oracle", "Serve an oracle provider over the protocol");
  std::string host = "127.0.0.1";
  int port = 8080;
  so->add_option("--provider", provider_spec)->required();
  so->add_option("--joint", joint_spec);
  so->add_option("--host", host);
  so->add_option("--port", port);

  // run
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  std::string config_path;
  run->add_option("--config", config_path)->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*count) {
      emit(g, counting::to_json(counting::count_report(vocab, len, k)).dump(2) + "\n");
    } else if (*check) {
      const auto report = harness::oracle_check(vocab, len, joints, g.seed);
      emit(g, report.dump(2) + "\n");
      if (!report["passed"].get<bool>()) return kExitCheckFailed;
    } else if (*disagree || *eoc) {
      const auto provider = harness::make_provider(provider_spec, joint_spec);
      const auto patterns = patterns::parse_pattern_spec(pattern_spec);
      const auto m = metrics::parse_m_range(m_text);
      metrics::check_m_range(m, patterns.size());
      const auto all = load_all(tasks);
      const auto scored = score_tasks(all, *provider, patterns, g.seed,
                                      {length_normalize, renormalize}, g.jobs);
      if (*disagree) {
        emit(g, harness::disagreement_csv(metrics::disagreement_curve(scored, patterns.size(), m)));
      } else {
        const auto p = pooling == "max" ? ensemble::Pooling::kMax : ensemble::Pooling::kAverage;
        emit(g, harness::accuracy_csv(
                    ensemble::eoc_accuracy_curve(scored, patterns.size(), m, p)));
      }
    } else if (*bigram) {
      const auto provider = harness::make_provider(provider_spec, joint_spec);
      auto loaded = harness::load_quadruples(quads_path);
      for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
      bigram::InferOptions options;
      options.mode = mode == "both" ? bigram::ExtractionMode::kBothMasked
                                    : bigram::ExtractionMode::kSingleMask;
      options.pairwise_normalize = pairwise;
      const auto stats = bigram::quadruple_stats(loaded.items, *provider, options, g.jobs);
      emit(g, bigram::to_json(stats).dump(2) + "\n");
    } else if (*synth) {
      if (what == "joint") {
        if (vocab < 2 || len < 1) throw InvalidArgument("synth joint needs --vocab and --len");
        const auto joint = oracle::random_joint(Vocabulary::of_size(vocab), len, g.seed);
        if (g.out.empty()) throw InvalidArgument("synth joint needs --out");
        harness::save_joint(g.out, joint);
      } else {
        if (joint_spec.empty()) throw InvalidArgument("synth needs --joint");
        auto joint =
            std::make_shared<const oracle::JointTable>(harness::joint_from_spec(joint_spec));
        if (g.out.empty()) throw InvalidArgument("synth needs --out");
        if (what == "tasks") {
          harness::save_tasks(g.out, harness::synth_tasks(joint, n, candidates, g.seed));
        } else {
          harness::save_quadruples(g.out, harness::synth_quadruples(joint, n, g.seed));
        }
      }
    } else if (*sc) {
      if (const char* env = std::getenv(remote::kEndpointEnv); endpoint.empty() && env) {
        endpoint = env;
      }
      if (endpoint.empty()) throw InvalidArgument("serve-check needs --endpoint");
      const auto report = serve_check(endpoint, timeout_ms);
      emit(g, report.dump(2) + "\n");
      if (!report["passed"].get<bool>()) return kExitCheckFailed;
    } else if (*so) {
      remote::ProviderServer server(harness::make_provider(provider_spec, joint_spec),
                                    provider_spec);
      std::cerr << "serving on " << host << ":" << port << "\n";
      server.listen(host, port);
    } else if (*run) {
      auto config = harness::load_config(config_path);
      if (!g.out.empty()) config.out_dir = g.out;
      if (app.count("--jobs")) config.jobs = g.jobs;
      if (app.count("--seed")) config.seed = g.seed;
      const auto record = harness::run_experiment(config);
      for (const auto& w : record.warnings) std::cerr << "warning: " << w << "\n";
      for (const auto& o : record.outputs) std::cout << config.out_dir << "/" << o << "\n";
    }
  } catch (const harness::RunFailed& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const std::logic_error& e) {
    std::cerr << "invariant violated: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
