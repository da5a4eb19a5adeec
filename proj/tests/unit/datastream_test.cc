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
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "noisycre/datastream.h"

namespace noisycre {
namespace {

const std::filesystem::path kData = NOISYCRE_TEST_DATA_DIR;

TEST(GenerateSyntheticTest, SmallShapeIsClean) {
  const Dataset d = generate_synthetic(2, 3, 4, 10.0, 0);
  ASSERT_EQ(d.size(), 6u);
  std::map<int, int> per;
  for (const auto& e : d.examples) {
    ++per[e.gold_label];
    EXPECT_EQ(e.gold_label, e.observed_label);
    EXPECT_FALSE(e.is_corrupted);
    EXPECT_EQ(e.input.vector.size(), 4u);
  }
  EXPECT_EQ(per[0], 3);
  EXPECT_EQ(per[1], 3);
}

TEST(GenerateSyntheticTest, FewRelScale) {
  const Dataset d = generate_synthetic(80, 700, 4, 6.0, 1);
  EXPECT_EQ(d.size(), 56000u);
}

TEST(GenerateSyntheticTest, NearestCentroidSeparable) {
  const Dataset d = generate_synthetic(5, 200, 4, 10.0, 2);
  std::map<int, Vec> sum;
  std::map<int, int> count;
  std::vector<const Example*> test;
  std::map<int, int> seen;
  for (const auto& e : d.examples) {
    if (seen[e.gold_label]++ % 2 == 0) {
      auto& s = sum[e.gold_label];
      s.resize(4, 0.0);
      for (size_t i = 0; i < 4; ++i) s[i] += e.input.vector[i];
      ++count[e.gold_label];
    } else {
      test.push_back(&e);
    }
  }
  for (auto& [r, s] : sum)
    for (auto& v : s) v /= count[r];
  int correct = 0;
  for (const Example* e : test) {
    int best = -1;
    double best_d = 0.0;
    for (const auto& [r, c] : sum) {
      const double dd = squared_distance(e->input.vector, c);
      if (best < 0 || dd < best_d) {
        best = r;
        best_d = dd;
      }
    }
    correct += best == e->gold_label ? 1 : 0;
  }
  EXPECT_GE(static_cast<double>(correct) / test.size(), 0.99);
}

TEST(GenerateSyntheticTest, MeansRespectSeparation) {
  const Dataset d = generate_synthetic(6, 2000, 3, 5.0, 3);
  std::map<int, Vec> mean;
  for (const auto& e : d.examples) {
    auto& m = mean[e.gold_label];
    m.resize(3, 0.0);
    for (size_t i = 0; i < 3; ++i) m[i] += e.input.vector[i] / 2000.0;
  }
  for (const auto& [a, ma] : mean)
    for (const auto& [b, mb] : mean)
      if (a < b) EXPECT_GT(std::sqrt(squared_distance(ma, mb)), 5.0 - 0.3);
}

TEST(GenerateSyntheticTest, InvalidSizes) {
  EXPECT_THROW(generate_synthetic(1, 3, 4, 1.0, 0), ConfigError);
  EXPECT_THROW(generate_synthetic(2, 1, 4, 1.0, 0), ConfigError);
  EXPECT_THROW(generate_synthetic(2, 3, 4, 0.0, 0), ConfigError);
}

TEST(GenerateSyntheticTest, Deterministic) {
  EXPECT_EQ(generate_synthetic(3, 10, 4, 5.0, 9).examples,
            generate_synthetic(3, 10, 4, 5.0, 9).examples);
}

TEST(IngestJsonlTest, SingleRecord) {
  const Dataset d = ingest_jsonl(kData / "one_record.jsonl");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.kind, InputKind::kTokens);
  EXPECT_EQ(d.examples[0].gold_label, 0);
}

TEST(IngestJsonlTest, MissingRelationIsParseErrorAtLine1) {
  try {
    ingest_jsonl(kData / "missing_relation.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
}

TEST(IngestJsonlTest, OutOfRangeSpanIsValidationError) {
  EXPECT_THROW(ingest_jsonl(kData / "bad_span.jsonl"), ValidationError);
}

TEST(IngestJsonlTest, MissingFileIsIoError) {
  EXPECT_THROW(ingest_jsonl(kData / "absent.jsonl"), IoError);
}

TEST(IngestJsonlTest, RelationIdsFollowFirstSeenOrder) {
  std::ifstream in(kData / "relations_100.jsonl");
  std::vector<std::string> order;
  std::string line;
  while (std::getline(in, line)) {
    const auto rel = nlohmann::json::parse(line).at("relation").get<std::string>();
    if (std::find(order.begin(), order.end(), rel) == order.end()) order.push_back(rel);
  }
  const Dataset d = ingest_jsonl(kData / "relations_100.jsonl");
  EXPECT_EQ(d.size(), 100u);
  EXPECT_EQ(d.relation_names, order);
  EXPECT_EQ(d.relation_names.size(), 4u);
}

TEST(InjectNoiseTest, ZeroRateIsIdentity) {
  const Dataset d = generate_synthetic(4, 10, 3, 5.0, 0);
  const Dataset n = inject_noise(d, {0.0, NoiseProtocol::kUniformFlip, 1});
  EXPECT_EQ(n.examples, d.examples);
}

TEST(InjectNoiseTest, ExactCountAndFlags) {
  const Dataset d = generate_synthetic(10, 1000, 2, 5.0, 0);
  const Dataset n = inject_noise(d, {0.3, NoiseProtocol::kUniformFlip, 1});
  size_t corrupted = 0;
  for (const auto& e : n.examples) {
    if (e.is_corrupted) {
      ++corrupted;
      EXPECT_NE(e.observed_label, e.gold_label);
    } else {
      EXPECT_EQ(e.observed_label, e.gold_label);
    }
  }
  EXPECT_EQ(corrupted, 3000u);
}

TEST(InjectNoiseTest, CorruptionCountRounding) {
  EXPECT_EQ(corruption_count(0.3, 10000), 3000);
  EXPECT_EQ(corruption_count(0.5, 5), 3);
  EXPECT_EQ(corruption_count(0.0, 5), 0);
}

TEST(InjectNoiseTest, InvalidRateAndPool) {
  const Dataset d = generate_synthetic(2, 10, 3, 5.0, 0);
  EXPECT_THROW(inject_noise(d, {1.5, NoiseProtocol::kUniformFlip, 0}), ConfigError);
  EXPECT_THROW(inject_noise(d, {-0.1, NoiseProtocol::kUniformFlip, 0}), ConfigError);
  EXPECT_THROW(inject_noise(d, {0.5, NoiseProtocol::kGlobalOod, 0}), ConfigError);
  const Dataset tiny = generate_synthetic(2, 2, 3, 5.0, 0, 10, 1000);
  EXPECT_THROW(inject_noise(d, {0.5, NoiseProtocol::kGlobalOod, 0}, &tiny),
               CapacityError);
}

TEST(InjectNoiseTest, GlobalOodReplacesWithPoolExamples) {
  const Dataset d = generate_synthetic(4, 25, 3, 5.0, 0);
  const Dataset pool = generate_synthetic(3, 20, 3, 5.0, 1, 100, 5000);
  const Dataset n = inject_noise(d, {0.2, NoiseProtocol::kGlobalOod, 2}, &pool);
  size_t corrupted = 0;
  for (const auto& e : n.examples) {
    if (!e.is_corrupted) continue;
    ++corrupted;
    EXPECT_GE(e.gold_label, 100);
    EXPECT_LT(e.observed_label, 4);
  }
  EXPECT_EQ(corrupted, 20u);
}

TEST(InjectNoiseTest, Deterministic) {
  const Dataset d = generate_synthetic(4, 50, 3, 5.0, 0);
  EXPECT_EQ(inject_noise(d, {0.3, NoiseProtocol::kUniformFlip, 4}).examples,
            inject_noise(d, {0.3, NoiseProtocol::kUniformFlip, 4}).examples);
}

TEST(PartitionTasksTest, FortyTwoRelationsTenTasks) {
  const Dataset d = generate_synthetic(42, 2, 2, 5.0, 0);
  const TaskStream s = partition_tasks(d, 10, 3);
  std::multiset<size_t> sizes;
  for (const auto& r : s.task_relations) sizes.insert(r.size());
  EXPECT_EQ(sizes.count(5), 2u);
  EXPECT_EQ(sizes.count(4), 8u);
}

TEST(PartitionTasksTest, EightyRelationsTenTasks) {
  const Dataset d = generate_synthetic(80, 2, 2, 5.0, 0);
  const TaskStream s = partition_tasks(d, 10, 3);
  for (const auto& r : s.task_relations) EXPECT_EQ(r.size(), 8u);
}

TEST(PartitionTasksTest, SingleTaskHoldsEverything) {
  const Dataset d = generate_synthetic(5, 4, 2, 5.0, 0);
  const TaskStream s = partition_tasks(d, 1, 3);
  ASSERT_EQ(s.n_tasks, 1);
  EXPECT_EQ(s.tasks[0].size(), d.size());
}

TEST(PartitionTasksTest, TooManyTasks) {
  const Dataset d = generate_synthetic(3, 4, 2, 5.0, 0);
  EXPECT_THROW(partition_tasks(d, 4, 0), ConfigError);
}

TEST(PartitionTasksTest, PartitionInvariants) {
  const Dataset d = inject_noise(generate_synthetic(12, 20, 2, 5.0, 0),
                                 {0.3, NoiseProtocol::kUniformFlip, 1});
  const TaskStream s = partition_tasks(d, 5, 7);
  std::map<int, int> owners;
  for (int t = 0; t < s.n_tasks; ++t)
    for (int r : s.task_relations[static_cast<size_t>(t)]) ++owners[r];
  EXPECT_EQ(owners.size(), 12u);
  for (const auto& [r, n] : owners) EXPECT_EQ(n, 1);
  std::set<int64_t> ids;
  for (int t = 0; t < s.n_tasks; ++t)
    for (const auto& e : s.tasks[static_cast<size_t>(t)]) {
      EXPECT_EQ(s.relation_to_task.at(e.observed_label), t);
      ids.insert(e.id);
    }
  EXPECT_EQ(ids.size(), d.size());
  EXPECT_EQ(s.total_examples(), d.size());
}

TEST(NoiseTypeTest, Taxonomy) {
  TaskStream s;
  s.n_tasks = 10;
  s.tasks.resize(10);
  s.task_relations.resize(10);
  for (int t = 0; t < 10; ++t) {
    s.task_relations[static_cast<size_t>(t)] = {t};
    s.relation_to_task[t] = t;
  }
  Example clean{1, {}, 5, 5, false};
  Example closed{2, {}, 2, 5, true};
  Example open{3, {}, 9, 3, true};
  Example ood{4, {}, 500, 3, true};
  s.tasks[5] = {clean, closed};
  s.tasks[3] = {open, ood};
  EXPECT_EQ(noise_type(clean, 5, s), NoiseType::kClean);
  EXPECT_EQ(noise_type(closed, 5, s), NoiseType::kClosedSet);
  EXPECT_EQ(noise_type(open, 3, s), NoiseType::kOpenSet);
  EXPECT_EQ(noise_type(ood, 3, s), NoiseType::kOpenSet);
  EXPECT_THROW(noise_type(clean, 3, s), LookupError);
}

TEST(StreamManifestTest, RecordsSeedsAndFlags) {
  const Dataset d = inject_noise(generate_synthetic(4, 5, 2, 5.0, 0),
                                 {0.25, NoiseProtocol::kUniformFlip, 1});
  TaskStream s = partition_tasks(d, 2, 3);
  const auto m = stream_manifest(s);
  EXPECT_EQ(m.dump(), stream_manifest(partition_tasks(d, 2, 3)).dump());
  EXPECT_NE(m.dump().find("partition_seed"), std::string::npos);
}

}  // namespace
}  // namespace noisycre
