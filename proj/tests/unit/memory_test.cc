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
#include <set>

#include "noisycre/datastream.h"
#include "noisycre/memory.h"

namespace noisycre {
namespace {

EncoderConfig vector_config(int dim) {
  EncoderConfig c;
  c.embed_dim = dim;
  c.hidden_dim = 8;
  c.out_dim = 4;
  return c;
}

Example make(int64_t id, Vec x, int gold, int observed) {
  Example e;
  e.id = id;
  e.input.vector = std::move(x);
  e.gold_label = gold;
  e.observed_label = observed;
  e.is_corrupted = gold != observed;
  return e;
}

std::vector<const Example*> ptrs(const std::vector<Example>& v) {
  std::vector<const Example*> out;
  for (const auto& e : v) out.push_back(&e);
  return out;
}

TEST(KMeansTest, KEqualsPointCountGivesZeroInertia) {
  const std::vector<Vec> pts = {{0.0}, {1.0}, {5.0}, {9.0}};
  const KMeansResult r = kmeans(pts, 4, 1);
  EXPECT_DOUBLE_EQ(r.inertia, 0.0);
  EXPECT_EQ(std::set<int>(r.assignment.begin(), r.assignment.end()).size(), 4u);
}

TEST(KMeansTest, KAbovePointCountIsLowered) {
  const std::vector<Vec> pts = {{0.0}, {1.0}};
  EXPECT_EQ(kmeans(pts, 5, 1).centers.size(), 2u);
}

TEST(KMeansTest, SeparatedPairsMatchBruteForce) {
  const std::vector<Vec> pts = {{0.0}, {0.1}, {10.0}, {10.1}};
  double best = 1e300;
  unsigned best_mask = 0;
  for (unsigned mask = 1; mask < 15; ++mask) {
    double inertia = 0.0;
    for (unsigned side = 0; side < 2; ++side) {
      double sum = 0.0;
      int n = 0;
      for (unsigned i = 0; i < 4; ++i)
        if (((mask >> i) & 1u) == side) sum += pts[i][0], ++n;
      for (unsigned i = 0; i < 4; ++i)
        if (((mask >> i) & 1u) == side) inertia += std::pow(pts[i][0] - sum / n, 2);
    }
    if (inertia < best) best = inertia, best_mask = mask;
  }
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const KMeansResult r = kmeans(pts, 2, seed);
    EXPECT_NEAR(r.inertia, best, 1e-12);
    for (unsigned i = 0; i < 4; ++i)
      for (unsigned j = 0; j < 4; ++j)
        EXPECT_EQ(r.assignment[i] == r.assignment[j],
                  ((best_mask >> i) & 1u) == ((best_mask >> j) & 1u));
  }
}

TEST(KMeansTest, SingleClusterCenterIsMean) {
  const std::vector<Vec> pts = {{1.0, 2.0}, {3.0, -2.0}, {5.0, 6.0}};
  const KMeansResult r = kmeans(pts, 1, 0);
  EXPECT_NEAR(r.centers[0][0], 3.0, 1e-12);
  EXPECT_NEAR(r.centers[0][1], 2.0, 1e-12);
}

TEST(KMeansTest, InertiaNeverIncreases) {
  Rng rng(4);
  std::normal_distribution<double> g;
  std::vector<Vec> pts;
  for (int i = 0; i < 300; ++i) pts.push_back({g(rng) + (i % 5) * 2.0, g(rng)});
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const KMeansResult r = kmeans(pts, 20, seed);
    for (size_t i = 1; i < r.inertia_history.size(); ++i)
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] + 1e-9);
    EXPECT_LE(r.iterations, 100);
    EXPECT_EQ(kmeans(pts, 20, seed).assignment, r.assignment);
  }
}

TEST(KMeansTest, InvalidInput) {
  EXPECT_THROW(kmeans(std::vector<Vec>{}, 2, 0), ValidationError);
  EXPECT_THROW(kmeans(std::vector<Vec>{{1.0}}, 0, 0), ValidationError);
}

TEST(SelectExemplarsTest, FewerThanCapacityTakesAll) {
  const ModelState m = init_model(ModelRole::kMain, vector_config(2), 4, 1);
  std::vector<Example> ex;
  for (int i = 0; i < 5; ++i) ex.push_back(make(i, {0.1 * i, 1.0 - 0.2 * i}, 0, 0));
  EXPECT_EQ(select_exemplars(ptrs(ex), m, 20, 3).size(), 5u);
}

TEST(SelectExemplarsTest, TwoPairsPickMemberNearestItsPairMean) {
  const ModelState m = init_model(ModelRole::kMain, vector_config(2), 4, 1);
  const std::vector<Example> ex = {make(0, {0.0, 0.0}, 0, 0), make(1, {0.2, 0.1}, 0, 0),
                                   make(2, {9.0, 9.0}, 0, 0), make(3, {9.3, 9.1}, 0, 0)};
  const auto picks = select_exemplars(ptrs(ex), m, 2, 3);
  ASSERT_EQ(picks.size(), 2u);
  std::vector<Vec> h;
  for (const auto& e : ex) h.push_back(encode(m, embed_input(m, e.input)));
  auto nearer = [&](int a, int b) -> int64_t {
    Vec mean(h[a].size());
    for (size_t i = 0; i < mean.size(); ++i) mean[i] = (h[a][i] + h[b][i]) / 2.0;
    const double da = squared_distance(h[a], mean), db = squared_distance(h[b], mean);
    return da <= db ? a : b;
  };
  EXPECT_EQ(picks[0].id, nearer(0, 1));
  EXPECT_EQ(picks[1].id, nearer(2, 3));
}

TEST(UpdateBufferTest, CapacityCleanSourcingAndDuplicates) {
  const ModelState m = init_model(ModelRole::kMain, vector_config(3), 4, 1);
  const Dataset d = generate_synthetic(4, 40, 3, 5.0, 2);
  std::vector<Example> clean;
  for (const auto& e : d.examples)
    if (e.gold_label != 3) clean.push_back(e);
  MemoryBuffer buffer;
  const std::vector<int> rels = {0, 1, 2, 3};
  const BufferUpdate u = update_buffer(buffer, ptrs(clean), rels, m, 5);
  EXPECT_EQ(u.added, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(u.skipped, (std::vector<int>{3}));
  EXPECT_EQ(buffer.total(), 60u);
  std::set<int64_t> source;
  for (const auto& e : clean) source.insert(e.id);
  for (const auto& [rel, items] : buffer.store) {
    EXPECT_LE(items.size(), 20u);
    for (const auto& e : items) {
      EXPECT_EQ(e.observed_label, rel);
      EXPECT_TRUE(source.contains(e.id));
    }
  }
  EXPECT_THROW(update_buffer(buffer, ptrs(clean), rels, m, 5), IntegrityError);
}

TEST(UpdateBufferTest, TenTasksOfEightRelations) {
  const ModelState m = init_model(ModelRole::kMain, vector_config(2), 4, 1);
  const Dataset d = generate_synthetic(80, 25, 2, 3.0, 2);
  const TaskStream s = partition_tasks(d, 10, 1);
  MemoryBuffer buffer;
  for (int t = 0; t < 10; ++t) {
    update_buffer(buffer, ptrs(s.tasks[static_cast<size_t>(t)]),
                  s.task_relations[static_cast<size_t>(t)], m, static_cast<uint64_t>(t));
    if (t == 0) EXPECT_EQ(buffer.total(), 160u);
  }
  EXPECT_EQ(buffer.store.size(), 80u);
}

TEST(PrototypesTest, SingleAndPairMeans) {
  const ModelState m = init_model(ModelRole::kMain, vector_config(2), 4, 1);
  MemoryBuffer buffer;
  buffer.store[3] = {make(0, {0.5, 0.5}, 3, 3)};
  buffer.store[5] = {make(1, {1.0, 0.0}, 5, 5), make(2, {0.0, -1.0}, 5, 5)};
  const PrototypeSet p = compute_prototypes(buffer, m);
  EXPECT_EQ(p.prototypes.at(3), forward_main(m, buffer.store[3][0].input).z);
  const Vec u = forward_main(m, buffer.store[5][0].input).z;
  const Vec v = forward_main(m, buffer.store[5][1].input).z;
  for (size_t i = 0; i < u.size(); ++i)
    EXPECT_NEAR(p.prototypes.at(5)[i], (u[i] + v[i]) / 2.0, 1e-15);
}

TEST(PrototypesTest, StaleAfterModelUpdate) {
  ModelState m = init_model(ModelRole::kMain, vector_config(2), 4, 1);
  MemoryBuffer buffer;
  buffer.store[0] = {make(0, {0.5, 0.5}, 0, 0)};
  const PrototypeSet p = compute_prototypes(buffer, m);
  EXPECT_FALSE(prototypes_stale(p, m));
  optimizer_step(m, Vec(m.params.size(), 0.1), 1e-3);
  EXPECT_TRUE(prototypes_stale(p, m));
}

TEST(NcmTest, SinglePrototypeTiesAndEmpty) {
  PrototypeSet p;
  EXPECT_THROW(ncm_predict(Vec{0.0}, p), StateError);
  p.prototypes[7] = {1.0, 1.0};
  EXPECT_EQ(ncm_predict(Vec{-5.0, 3.0}, p), 7);
  p.prototypes[2] = {-1.0, -1.0};
  EXPECT_EQ(ncm_predict(Vec{1.0, -1.0}, p), 2);
}

TEST(NcmTest, MatchesExhaustiveScanAndOrderInvariant) {
  Rng rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PrototypeSet p;
  for (int r : {4, 1, 8}) p.prototypes[r] = {u(rng), u(rng)};
  for (int q = 0; q < 200; ++q) {
    const Vec z = {u(rng), u(rng)};
    int best = -1;
    double bd = 0.0;
    for (int r : {8, 4, 1}) {
      const double d = squared_distance(z, p.prototypes[r]);
      if (best < 0 || d < bd || (d == bd && r < best)) best = r, bd = d;
    }
    EXPECT_EQ(ncm_predict(z, p), best);
  }
}

}  // namespace
}  // namespace noisycre
