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


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "brute.hpp"
#include "mlmc/harness.hpp"
#include "mlmc/patterns.hpp"

using namespace mlmc;
using namespace mlmc::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / "mlmc_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(MLMC_CLI_PATH) + " " + args).c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(LoadTasks, ThreeLines) {
  const auto dir = scratch("load");
  write(dir / "t.jsonl",
        R"({"id":"a","context":[1,2],"candidates":[[0],[1]],"gold":0}
{"id":"b","context":[3],"candidates":[[0],[1,2]],"gold":1}

{"id":"c","context":[0,0,0],"candidates":[[4],[5],[6]],"gold":2}
)");
  const auto loaded = load_tasks(dir / "t.jsonl");
  ASSERT_EQ(loaded.items.size(), 3u);
  EXPECT_TRUE(loaded.warnings.empty());
  EXPECT_EQ(loaded.items[2].candidates[2], TokenSeq{6});
}

TEST(LoadTasks, BadGoldNamesTheLine) {
  const auto dir = scratch("bad");
  write(dir / "t.jsonl",
        R"({"id":"a","context":[1,2],"candidates":[[0],[1]],"gold":0}
{"id":"b","context":[3],"candidates":[[0],[1]],"gold":5}
not json
)");
  try {
    load_tasks(dir / "t.jsonl");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.total(), 2u);
    ASSERT_EQ(e.lines().size(), 2u);
    EXPECT_EQ(e.lines()[0].first, 2u);
    EXPECT_NE(e.lines()[0].second.find("gold"), std::string::npos);
    EXPECT_EQ(e.lines()[1].first, 3u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(LoadTasks, ReportsAtMostTenLines) {
  const auto dir = scratch("many");
  std::string text;
  for (int i = 0; i < 15; ++i) text += "{}\n";
  write(dir / "t.jsonl", text);
  try {
    load_tasks(dir / "t.jsonl");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.total(), 15u);
    EXPECT_EQ(e.lines().size(), 10u);
  }
}

TEST(LoadTasks, EmptyFileWarnsAndMissingFileThrows) {
  const auto dir = scratch("empty");
  write(dir / "t.jsonl", "\n");
  const auto loaded = load_tasks(dir / "t.jsonl");
  EXPECT_TRUE(loaded.items.empty());
  EXPECT_EQ(loaded.warnings.size(), 1u);
  EXPECT_THROW(load_tasks(dir / "missing.jsonl"), IoError);
}

TEST(Files, RoundTrip) {
  const auto dir = scratch("round");
  auto joint = std::make_shared<const JointTable>(joint_from_spec("v=3,l=4,seed=2"));
  const auto tasks = synth_tasks(joint, 25, 3, 1);
  save_tasks(dir / "t.jsonl", tasks);
  EXPECT_EQ(load_tasks(dir / "t.jsonl").items, tasks);
  const auto quads = synth_quadruples(joint, 25, 1);
  save_quadruples(dir / "q.jsonl", quads);
  EXPECT_EQ(load_quadruples(dir / "q.jsonl").items, quads);
  save_joint(dir / "j.json", *joint);
  const auto back = load_joint(dir / "j.json");
  EXPECT_EQ(back.vocab(), joint->vocab());
  ASSERT_EQ(back.probs().size(), joint->probs().size());
  for (std::size_t i = 0; i < back.probs().size(); ++i) {
    EXPECT_EQ(back.probs()[i], joint->probs()[i]);
  }
}

TEST(JointSpec, Forms) {
  const auto u = joint_from_spec("v=2,l=3,uniform");
  for (double p : u.probs()) EXPECT_DOUBLE_EQ(p, 0.125);
  EXPECT_EQ(joint_from_spec("v=3,l=2,seed=4").probs().size(), 9u);
  EXPECT_THROW(joint_from_spec("v=3"), InvalidArgument);
  EXPECT_THROW(joint_from_spec("v=3,l=2,q=1"), InvalidArgument);
}

TEST(SynthTasks, DeterministicValidAndGoldIsArgmax) {
  auto joint = std::make_shared<const JointTable>(joint_from_spec("v=5,l=4,seed=3"));
  const auto a = synth_tasks(joint, 100, 4, 9);
  EXPECT_EQ(a, synth_tasks(joint, 100, 4, 9));
  EXPECT_NE(a, synth_tasks(joint, 100, 4, 10));
  const auto provider = oracle::consistent_provider(joint);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& t = a[i];
    EXPECT_EQ(t.id, "synth-" + std::to_string(i));
    EXPECT_TRUE(validate(t).empty());
    EXPECT_EQ(t.context.size(), 3u);
    std::vector<TokenId> ids;
    for (const auto& c : t.candidates) ids.push_back(c[0]);
    std::sort(ids.begin(), ids.end());
    EXPECT_EQ(std::unique(ids.begin(), ids.end()), ids.end());
  }
  const auto pats = std::vector<MaskPattern>{MaskPattern::baseline()};
  const auto scored = score_tasks(a, *provider, pats, 0);
  EXPECT_EQ(ensemble::baseline_accuracy(scored), 1.0);
  EXPECT_THROW(synth_tasks(joint, 1, 6, 0), InvalidArgument);
}

TEST(SynthQuadruples, AlternativesDiffer) {
  auto joint = std::make_shared<const JointTable>(joint_from_spec("v=3,l=5,seed=1"));
  const auto q = synth_quadruples(joint, 200, 2);
  EXPECT_EQ(q, synth_quadruples(joint, 200, 2));
  for (const auto& x : q) {
    EXPECT_TRUE(validate(x).empty());
    EXPECT_EQ(x.context[x.slot], x.x11);
    EXPECT_EQ(x.context[x.slot + 1], x.x21);
  }
}

TEST(LambadaCandidates, UniformTakesLowestIds) {
  auto joint = std::make_shared<const JointTable>(joint_from_spec("v=7,l=3,uniform"));
  const auto provider = oracle::consistent_provider(joint);
  EXPECT_EQ(lambada_candidates(*provider, {1, 2}),
            (std::vector<TokenSeq>{{0}, {1}, {2}, {3}, {4}}));
  EXPECT_THROW(lambada_candidates(*provider, {1, 2}, 1), InvalidArgument);
  EXPECT_THROW(lambada_candidates(*provider, {1, 2}, 8), InvalidArgument);
}

TEST(LambadaCandidates, RandomJointMatchesEnumeration) {
  const std::size_t v = 6, l = 3;
  const auto probs = brute::random_table(v, l, 8);
  auto joint = std::make_shared<const JointTable>(
      JointTable::create(Vocabulary::of_size(v), l, probs));
  const auto provider = oracle::consistent_provider(joint);
  std::vector<double> p(v);
  for (TokenId t = 0; t < v; ++t) p[t] = brute::conditional(probs, v, l, {{0, 4}, {1, 1}}, {{2, t}});
  std::vector<TokenId> order(v);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return p[a] > p[b]; });
  std::vector<TokenSeq> expected;
  for (std::size_t i = 0; i < 5; ++i) expected.push_back({order[i]});
  EXPECT_EQ(lambada_candidates(*provider, {4, 1}), expected);
}

TEST(MakeProvider, Specs) {
  EXPECT_NO_THROW(make_provider("oracle:v=3,l=3,seed=1"));
  EXPECT_NO_THROW(make_provider("oracle", "v=3,l=3,seed=1"));
  EXPECT_NO_THROW(make_provider("perturbed:0.5:2:v=3,l=3,seed=1"));
  EXPECT_NO_THROW(make_provider("confidence:1.0:0.3:2.0:4", "v=3,l=3,seed=1"));
  EXPECT_THROW(make_provider("oracle"), InvalidArgument);
  EXPECT_THROW(make_provider("perturbed:-1:2:v=3,l=3"), InvalidArgument);
  EXPECT_THROW(make_provider("gpt:x"), InvalidArgument);
  EXPECT_THROW(make_provider("remote:"), InvalidArgument);
}

TEST(Config, ParseAndRoundTrip) {
  const auto j = nlohmann::json::parse(R"({
    "provider": "oracle", "joint": "v=3,l=6,seed=1", "tasks": ["a.jsonl"],
    "m": "2..5", "seed": 4, "experiments": {"disagree": false},
    "pooling": "average", "min_baseline_accuracy": 0.25, "seed_policy": "fixed"})");
  const auto c = config_from_json(j);
  EXPECT_EQ(c.m.lo, 2u);
  EXPECT_EQ(c.m.hi, 5u);
  EXPECT_FALSE(c.disagree);
  EXPECT_TRUE(c.eoc);
  EXPECT_EQ(c.pooling, ensemble::Pooling::kAverage);
  EXPECT_EQ(c.min_baseline_accuracy, 0.25);
  EXPECT_EQ(c.seed_policy, SeedPolicy::kFixed);
  const auto again = config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(again), to_json(c));
  EXPECT_EQ(config_from_json(nlohmann::json::parse(R"({"provider":"oracle","tasks":[],"m":3})"))
                .m.lo,
            3u);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"provider":"o","tasks":[],"x":1})")),
               InvalidArgument);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"tasks":[]})")), InvalidArgument);
  EXPECT_THROW(
      config_from_json(nlohmann::json::parse(R"({"provider":"o","tasks":[],"pooling":"min"})")),
      InvalidArgument);
}

class RunExperimentTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = scratch(::testing::UnitTest::GetInstance()->current_test_info()->name());
    auto joint = std::make_shared<const JointTable>(joint_from_spec("v=4,l=6,seed=5"));
    save_tasks(dir_ / "first.jsonl", synth_tasks(joint, 60, 4, 1));
    save_tasks(dir_ / "second.jsonl", synth_tasks(joint, 40, 4, 2));
    config_.provider = "perturbed:0.8:3";
    config_.joint = "v=4,l=6,seed=5";
    config_.tasks = {(dir_ / "first.jsonl").string(), (dir_ / "second.jsonl").string()};
    config_.m = {1, 10};
  }

  fs::path dir_;
  ExperimentConfig config_;
};

TEST_F(RunExperimentTest, WritesPooledAndPerFileOutputs) {
  config_.out_dir = (dir_ / "out").string();
  const auto record = run_experiment(config_);
  for (const char* name : {"disagreement.csv", "eoc.csv", "disagreement.first.csv",
                           "disagreement.second.csv", "disagreement.macro.csv", "eoc.first.csv",
                           "eoc.second.csv", "eoc.macro.csv", "run_record.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "out" / name)) << name;
  }
  ASSERT_TRUE(record.disagreement.has_value());
  EXPECT_EQ(record.disagreement->points.front().rate, 0.0);
  EXPECT_EQ(record.disagreement->points.front().instances, 100u);
  const auto csv = slurp(dir_ / "out" / "disagreement.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "m,rate,subsets,instances,skipped");
  const auto rec = nlohmann::json::parse(slurp(dir_ / "out" / "run_record.json"));
  EXPECT_EQ(rec.at("tool_version"), kToolVersion);
  EXPECT_TRUE(rec.at("matrices_included").get<bool>());
  EXPECT_EQ(rec.at("matrices").size(), 100u);
}

TEST_F(RunExperimentTest, OutputsIndependentOfJobs) {
  config_.out_dir = (dir_ / "a").string();
  config_.jobs = 1;
  run_experiment(config_);
  config_.out_dir = (dir_ / "b").string();
  config_.jobs = 4;
  run_experiment(config_);
  for (const char* name : {"disagreement.csv", "eoc.csv", "eoc.macro.csv"}) {
    EXPECT_EQ(slurp(dir_ / "a" / name), slurp(dir_ / "b" / name)) << name;
  }
}

TEST_F(RunExperimentTest, OracleAgreesEverywhere) {
  config_.provider = "oracle";
  config_.out_dir = (dir_ / "out").string();
  config_.matrix_cap = 10;
  const auto record = run_experiment(config_);
  for (const auto& pt : record.disagreement->points) EXPECT_EQ(pt.rate, 0.0);
  for (const auto& pt : record.accuracy->points) EXPECT_EQ(pt.mean, 1.0);
  EXPECT_FALSE(record.matrices_included);
}

TEST_F(RunExperimentTest, RejectsBeforeScoring) {
  config_.out_dir = (dir_ / "out").string();
  auto bad = config_;
  bad.provider = "nonsense";
  EXPECT_THROW(run_experiment(bad), InvalidArgument);
  bad = config_;
  bad.tasks.push_back((dir_ / "missing.jsonl").string());
  EXPECT_THROW(run_experiment(bad), IoError);
  bad = config_;
  bad.m = {2, 11};
  EXPECT_THROW(run_experiment(bad), InvalidArgument);
  EXPECT_FALSE(fs::exists(dir_ / "out"));
}

TEST_F(RunExperimentTest, ErrorBudget) {
  // Token 9 lies outside the joint's vocabulary, so scoring this task fails.
  const std::string broken = R"({"id":"x","context":[9,9,9,9,9],"candidates":[[0],[1]],"gold":0})";
  write(dir_ / "third.jsonl", broken + "\n");
  config_.tasks.push_back((dir_ / "third.jsonl").string());
  config_.out_dir = (dir_ / "within").string();
  // One failure in 101 instances sits inside the 1% budget.
  const auto record = run_experiment(config_);
  EXPECT_EQ(record.files[2].errors, 1u);
  EXPECT_EQ(record.disagreement->errors, 1u);

  write(dir_ / "third.jsonl", broken + "\n" + broken + "\n");
  config_.out_dir = (dir_ / "over").string();
  EXPECT_THROW(run_experiment(config_), RunFailed);
  EXPECT_TRUE(fs::exists(dir_ / "over" / "run_record.json"));
  EXPECT_FALSE(fs::exists(dir_ / "over" / "eoc.csv"));
}

TEST_F(RunExperimentTest, BaselineFilterExcludesFiles) {
  auto joint = std::make_shared<const JointTable>(joint_from_spec("v=4,l=6,seed=5"));
  auto tasks = synth_tasks(joint, 30, 4, 4);
  for (auto& t : tasks) t.gold = (t.gold + 1) % 4;
  save_tasks(dir_ / "wrong.jsonl", tasks);
  config_.provider = "oracle";
  config_.tasks.push_back((dir_ / "wrong.jsonl").string());
  config_.min_baseline_accuracy = 0.5;
  config_.out_dir = (dir_ / "out").string();
  const auto record = run_experiment(config_);
  ASSERT_EQ(record.files.size(), 3u);
  EXPECT_TRUE(record.files[2].excluded);
  EXPECT_EQ(record.files[2].baseline_accuracy, 0.0);
  EXPECT_EQ(record.disagreement->points.front().instances, 100u);
  EXPECT_FALSE(fs::exists(dir_ / "out" / "eoc.wrong.csv"));
}

TEST(OracleCheck, Passes) {
  const auto report = oracle_check(3, 4, 5, 1);
  EXPECT_TRUE(report.at("passed").get<bool>());
}

TEST(Csv, ShortestRoundTripNumbers) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(std::stod(format_double(2.0 / 3.0)), 2.0 / 3.0);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  EXPECT_EQ(run_cli("count --vocab 3 --len 4 --out " + (dir / "c.json").string()), 0);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "c.json")).at("n_mlm"), "216");
  EXPECT_EQ(run_cli("synth --what tasks --joint v=3,l=6,seed=1 --n 20 --candidates 3 --out " +
                    (dir / "t.jsonl").string()),
            0);
  EXPECT_EQ(run_cli("disagree --tasks " + (dir / "t.jsonl").string() +
                    " --provider oracle:v=3,l=6,seed=1 --m 2..4 --out " +
                    (dir / "d.csv").string()),
            0);
  EXPECT_EQ(slurp(dir / "d.csv"),
            "m,rate,subsets,instances,skipped\n2,0,45,20,0\n3,0,120,20,0\n4,0,210,20,0\n");
  EXPECT_EQ(run_cli("disagree --tasks " + (dir / "t.jsonl").string() +
                    " --provider bogus --m 2 2>/dev/null"),
            1);
}
