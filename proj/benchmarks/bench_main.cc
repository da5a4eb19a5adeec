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


// Micro-benchmarks for the hot paths of a task: model passes, the
// contrastive loss, K-Means exemplar clustering, and the attack.

#include <benchmark/benchmark.h>

#include <random>

#include "noisycre/attack.h"
#include "noisycre/contrastive.h"
#include "noisycre/memory.h"
#include "noisycre/models.h"

namespace {

using namespace noisycre;

EncoderConfig bench_encoder() {
  EncoderConfig c;
  c.embed_dim = 16;
  c.hidden_dim = 64;
  c.out_dim = 32;
  return c;
}

Matrix random_row(Rng& rng, size_t n) {
  std::normal_distribution<double> g;
  Vec v(n);
  for (auto& x : v) x = g(rng);
  return Matrix::row_vector(v);
}

void BM_MainForwardBackward(benchmark::State& state) {
  const ModelState m = init_model(ModelRole::kMain, bench_encoder(), 64, 1);
  Rng rng(2);
  const Matrix x = random_row(rng, 16);
  Vec grad(m.params.size(), 0.0);
  const Vec gz(64, 0.01);
  for (auto _ : state) {
    MainTrace t;
    forward_main(m, x, &t);
    backward_main(m, t, gz, {}, grad);
    benchmark::DoNotOptimize(grad.data());
  }
}
BENCHMARK(BM_MainForwardBackward);

void BM_NaclLoss(benchmark::State& state) {
  const size_t n = static_cast<size_t>(state.range(0));
  Rng rng(3);
  std::normal_distribution<double> g;
  ContrastBatch b;
  b.temperature = 0.05;
  for (size_t i = 0; i < n; ++i) {
    Vec z(64);
    for (auto& v : z) v = g(rng);
    const double norm = l2_norm(z);
    for (auto& v : z) v /= norm;
    b.z.push_back(std::move(z));
    b.labels.push_back(static_cast<int>(i % 4));
    const bool anchor = i < n / 2;
    b.roles.push_back(anchor ? PoolRole::kClean
                             : (i % 2 == 0 ? PoolRole::kAttPos : PoolRole::kNeg));
    if (anchor) b.anchors.push_back(i);
  }
  for (auto _ : state) benchmark::DoNotOptimize(nacl_loss(b).loss);
}
BENCHMARK(BM_NaclLoss)->Arg(16)->Arg(32);

void BM_KMeans(benchmark::State& state) {
  Rng rng(4);
  std::vector<Vec> pts;
  for (int i = 0; i < 160; ++i) pts.push_back(random_row(rng, 32).data());
  for (auto _ : state) benchmark::DoNotOptimize(kmeans(pts, 20, 5).inertia);
}
BENCHMARK(BM_KMeans);

void BM_Attack(benchmark::State& state) {
  const ModelState aux = init_model(ModelRole::kAuxiliary, bench_encoder(), 4, 6);
  Rng rng(7);
  const Matrix x = random_row(rng, 16);
  AttackConfig cfg;
  uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(noise_guided_attack(aux, x, 1, cfg, ++seed).delta);
}
BENCHMARK(BM_Attack);

}  // namespace

BENCHMARK_MAIN();
