// Copyright 2026 The noisycre Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "noisycre/harness.h"

namespace noisycre {
namespace {

namespace fs = std::filesystem;
const fs::path kData = NOISYCRE_TEST_DATA_DIR;

RunConfig small(Method method, double noise = 0.3, uint64_t seed = 1) {
  RunConfig c;
  c.method = method;
  c.seed = seed;
  c.stream.n_relations = 8;
  c.stream.train_per_relation = 40;
  c.stream.test_per_relation = 10;
  c.stream.input_dim = 8;
  c.stream.n_tasks = 4;
  c.stream.noise_rate = noise;
  c.hidden_dim = 16;
  c.out_dim = 8;
  c.proj_dim = 16;
  c.capacity = 5;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("noisycre_harness_" + name);
  fs::remove_all(p);
  return p;
}

TEST(DefaultsTest, GammaTemperatureLearningRate) {
  EXPECT_DOUBLE_EQ(default_gamma(Profile::kFewRel, 0.1), 0.8);
  EXPECT_DOUBLE_EQ(default_gamma(Profile::kFewRel, 0.3), 0.6);
  EXPECT_DOUBLE_EQ(default_gamma(Profile::kFewRel, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(default_gamma(Profile::kTacred, 0.1), 0.9);
  EXPECT_DOUBLE_EQ(default_gamma(Profile::kTacred, 0.3), 0.75);
  EXPECT_DOUBLE_EQ(default_gamma(Profile::kTacred, 0.5), 0.6);
  EXPECT_DOUBLE_EQ(default_gamma(Profile::kFewRel, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(default_temperature(0.1), 0.1);
  EXPECT_DOUBLE_EQ(default_temperature(0.3), 0.05);
  EXPECT_DOUBLE_EQ(default_temperature(0.5), 0.2);
  EXPECT_DOUBLE_EQ(default_lr(Profile::kFewRel, InputKind::kTokens), 1e-5);
  EXPECT_DOUBLE_EQ(default_lr(Profile::kTacred, InputKind::kTokens), 2e-5);
  EXPECT_DOUBLE_EQ(default_lr(Profile::kFewRel, InputKind::kVector), 1e-3);
  RunConfig c;
  c.gamma = 0.7;
  EXPECT_DOUBLE_EQ(resolve(c, InputKind::kVector).gamma, 0.7);
}

TEST(DefaultsTest, TableKnobs) {
  const RunConfig c;
  EXPECT_EQ(c.main_epochs, 1);
  EXPECT_EQ(c.aux_epochs, 3);
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_EQ(c.proj_dim, 64);
  EXPECT_EQ(c.capacity, 20);
  EXPECT_DOUBLE_EQ(c.attack.epsilon, 0.1);
  EXPECT_EQ(c.attack.steps, 5);
  EXPECT_DOUBLE_EQ(c.attack.lambda, 0.1);
}

TEST(ConfigTest, JsonRoundTripAndUnknownKeys) {
  RunConfig c = small(Method::kNoiseRetain);
  c.gamma = 0.55;
  c.attack.lambda = -0.1;
  c.profile = Profile::kTacred;
  const RunConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  auto j = config_to_json(c);
  j["bogus"] = 1;
  EXPECT_THROW(config_from_json(j), ConfigError);
  EXPECT_THROW(load_config(kData / "absent.json"), IoError);
}

TEST(ConfigTest, ValidationRejectsBadValues) {
  RunConfig c;
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.stream.noise_rate = 1.2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.attack.epsilon = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.stream.source = "jsonl";
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_method("bogus"), ConfigError);
}

TEST(MetricsTest, LastAccuracyIsExampleWeighted) {
  const std::vector<std::vector<double>> a = {{1.0}, {0.5, 1.0}, {0.5, 0.8, 0.9}};
  const std::vector<size_t> sizes = {10, 30, 60};
  EXPECT_NEAR(last_accuracy(a, sizes), (5.0 + 24.0 + 54.0) / 100.0, 1e-15);
  EXPECT_DOUBLE_EQ(last_accuracy({{1.0}, {1.0, 1.0}}, {3, 4}), 1.0);
  EXPECT_THROW(last_accuracy({{1.0}, {1.0}}, {3, 4}), StateError);
}

TEST(MetricsTest, NormalizedForgetting) {
  EXPECT_NEAR(*normalized_forgetting({{0.8}, {0.7, 0.9}, {0.6, 0.8, 0.95}}), 0.25, 1e-15);
  EXPECT_DOUBLE_EQ(*normalized_forgetting({{0.8}, {0.8, 0.1}}), 0.0);
  EXPECT_FALSE(normalized_forgetting({{0.0}, {0.3, 0.1}}).has_value());
}

TEST(MetricsTest, BufferPurity) {
  MemoryBuffer b;
  EXPECT_FALSE(buffer_purity(b).has_value());
  for (int i = 0; i < 10; ++i) {
    Example e;
    e.id = i;
    e.gold_label = 0;
    e.observed_label = i < 3 ? 1 : 0;
    b.store[e.observed_label].push_back(e);
  }
  EXPECT_DOUBLE_EQ(*buffer_purity(b), 0.7);
  b.store.erase(1);
  EXPECT_DOUBLE_EQ(*buffer_purity(b), 1.0);
}

TEST(PhaseErrorTest, MessageCarriesPhaseAndTask) {
  const PhaseError e("attack", 3, "boom");
  EXPECT_EQ(std::string(e.what()), "[phase=attack task=3] boom");
  EXPECT_EQ(e.phase(), "attack");
  EXPECT_EQ(e.task(), 3);
}

TEST(BuildStreamTest, TestSetsAreCleanAndDisjointFromTraining) {
  const RunConfig c = small(Method::kNacl);
  const BuiltStream b = build_stream(c);
  std::set<int64_t> train;
  for (const auto& t : b.stream.tasks)
    for (const auto& e : t) train.insert(e.id);
  ASSERT_EQ(b.test_sets.size(), 4u);
  for (size_t k = 0; k < b.test_sets.size(); ++k) {
    for (const auto& e : b.test_sets[k]) {
      EXPECT_FALSE(train.contains(e.id));
      EXPECT_FALSE(e.is_corrupted);
      EXPECT_EQ(b.stream.relation_to_task.at(e.gold_label), static_cast<int>(k));
    }
  }
  EXPECT_EQ(b.stream.total_examples(), 8u * 40u);
}

TEST(BuildStreamTest, JsonlSource) {
  RunConfig c = small(Method::kNacl);
  c.stream.source = "jsonl";
  c.stream.path = kData / "relations_100.jsonl";
  c.stream.n_tasks = 2;
  const BuiltStream b = build_stream(c);
  EXPECT_EQ(b.kind, InputKind::kTokens);
  EXPECT_EQ(b.relations.size(), 4u);
  size_t test = 0;
  for (const auto& t : b.test_sets) test += t.size();
  EXPECT_EQ(b.stream.total_examples() + test, 100u);
  const RunResult r = run_stream(c, b);
  EXPECT_EQ(r.report.accuracy.size(), 2u);
}

TEST(RunStreamTest, PhaseOrderPerTask) {
  const RunResult r = run_stream(small(Method::kNacl));
  std::map<int, std::vector<std::string>> phases;
  uint64_t seq = 0;
  for (const auto& e : r.report.events) {
    EXPECT_EQ(e.seq, seq++);
    phases[e.task].push_back(e.phase);
  }
  EXPECT_EQ(phases[0], (std::vector<std::string>{"aux", "select", "attack", "train",
                                                  "buffer", "prototypes", "evaluate"}));
  for (int k = 1; k < 4; ++k)
    EXPECT_EQ(phases[k], (std::vector<std::string>{"aux", "select", "attack", "train", "buffer",
                                                    "replay", "prototypes", "evaluate"}));
}

TEST(RunStreamTest, BufferHoldsTaskExemplarsOnlyAfterTraining) {
  const RunResult r = run_stream(small(Method::kNacl));
  size_t skipped = 0;
  for (size_t k = 0; k < r.audits.size(); ++k) {
    skipped += r.report.tasks[k].skipped_relations.size();
    std::set<int> rels;
    for (const auto& item : r.audits[k].at("buffer").at("relations"))
      rels.insert(item.at("relation").get<int>());
    EXPECT_EQ(rels.size() + skipped, 2u * (k + 1));
    std::set<int64_t> clean;
    for (const auto& row : r.audits[k].at("selection"))
      if (row.at("set") == "clean") clean.insert(row.at("id").get<int64_t>());
    size_t from_task = 0;
    for (const auto& item : r.audits[k].at("buffer").at("relations"))
      for (const auto& ex : item.at("exemplars"))
        from_task += clean.contains(ex.get<int64_t>()) ? 1 : 0;
    EXPECT_GT(from_task, 0u);
  }
}

TEST(RunStreamTest, NoNoiseAndZeroGammaSkipsAttack) {
  RunConfig c = small(Method::kNacl, 0.0);
  const RunResult r = run_stream(c);
  for (const auto& t : r.report.tasks) {
    EXPECT_DOUBLE_EQ(t.gamma, 0.0);
    EXPECT_EQ(t.n_noisy, 0u);
    EXPECT_FALSE(t.asr.has_value());
  }
}

TEST(RunStreamTest, DeterministicReports) {
  for (Method m : all_methods()) {
    const RunConfig c = small(m);
    EXPECT_EQ(run_stream(c).report, run_stream(c).report) << to_string(m);
  }
}

TEST(RunStreamTest, AccuracyMatrixShapeAndRange) {
  for (Method m : all_methods()) {
    const RunReport r = run_stream(small(m)).report;
    ASSERT_EQ(r.accuracy.size(), 4u);
    for (size_t k = 0; k < r.accuracy.size(); ++k) {
      ASSERT_EQ(r.accuracy[k].size(), k + 1);
      for (double a : r.accuracy[k]) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
      }
    }
    EXPECT_EQ(accuracy_curve(r).size(), 4u);
    ASSERT_TRUE(r.last_accuracy.has_value());
  }
}

TEST(RunStreamTest, FinetuneForgetsFirstTask) {
  const RunReport r = run_stream(small(Method::kFinetune, 0.5)).report;
  EXPECT_GE(r.normalized_forgetting.value_or(0.0), 0.9);
}

TEST(RunStreamTest, LiteralFirstTaskGateSkipsFirstBuffer) {
  RunConfig c = small(Method::kNacl);
  c.literal_first_task_gate = true;
  const RunReport r = run_stream(c).report;
  for (const auto& e : r.events) EXPECT_FALSE(e.task == 0 && e.phase == "buffer");
}

TEST(RebootDiagnosticTest, ProducesBothSeparations) {
  const RunConfig c = small(Method::kNacl);
  const RebootDiagnostic d = reboot_diagnostic(c, build_stream(c));
  EXPECT_TRUE(d.rebooted.has_value());
  EXPECT_TRUE(d.warm_started.has_value());
}

TEST(ReportTest, MetricsRoundTrip) {
  const RunResult r = run_stream(small(Method::kNacl));
  EXPECT_EQ(report_from_json(report_to_json(r.report)), r.report);
  nlohmann::json j = report_to_json(r.report);
  j.erase("version");
  EXPECT_THROW(report_from_json(j), ParseError);
}

TEST(ReportTest, EmitWithAndWithoutPlots) {
  RunConfig c = small(Method::kNacl);
  c.dump_embeddings = true;
  const RunResult r = run_stream(c);
  const fs::path bare = scratch("bare");
  emit_report(r, bare, {false});
  EXPECT_TRUE(fs::exists(bare / "metrics.json"));
  EXPECT_TRUE(fs::exists(bare / "summary.txt"));
  EXPECT_FALSE(fs::exists(bare / "accuracy.svg"));
  EXPECT_EQ(read_report(bare / "metrics.json"), r.report);
  const fs::path full = scratch("full");
  emit_report(r, full);
  for (const char* f : {"accuracy.svg", "confidence.svg", "loss.svg", "asr.svg",
                        "embedding_2d.json", "audit_task_1.json", "timing.json"})
    EXPECT_TRUE(fs::exists(full / f)) << f;
  fs::remove_all(bare);
  fs::remove_all(full);
}

TEST(ReportTest, SweepTableListsMethods) {
  std::vector<SweepRow> rows;
  for (Method m : {Method::kNacl, Method::kDiscard}) {
    const RunReport r = run_stream(small(m)).report;
    rows.push_back({r.method, {*r.last_accuracy}, {r.normalized_forgetting},
                    {r.tasks.back().buffer_purity}, {accuracy_curve(r)}});
  }
  const std::string table = sweep_table(rows);
  EXPECT_NE(table.find("nacl"), std::string::npos);
  EXPECT_NE(table.find("discard"), std::string::npos);
  const fs::path dir = scratch("sweep");
  emit_sweep(rows, dir);
  EXPECT_TRUE(fs::exists(dir / "sweep.json"));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace noisycre
