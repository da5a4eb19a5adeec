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

#include "noisycre/memory.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace noisycre {

namespace {

size_t nearest(std::span<const Vec> centers, std::span<const double> p,
               double* dist) {
  size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < centers.size(); ++c) {
    const double d = squared_distance(centers[c], p);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist != nullptr) *dist = best_d;
  return best;
}

}  // namespace

KMeansResult kmeans(std::span<const Vec> points, int k, uint64_t seed,
                    int max_iter) {
  if (points.empty()) throw ValidationError("kmeans: no points");
  if (k < 1) throw ValidationError("kmeans: k must be >= 1");
  const size_t n = points.size();
  const size_t kk = std::min(static_cast<size_t>(k), n);
  const size_t dim = points[0].size();

  // k-means++ seeding
  Rng rng(derive_seed(seed, 0xC3));
  KMeansResult r;
  std::vector<bool> chosen(n, false);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  size_t first = std::uniform_int_distribution<size_t>(0, n - 1)(rng);
  r.centers.push_back(points[first]);
  chosen[first] = true;
  while (r.centers.size() < kk) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points[i], r.centers.back()));
      total += d2[i];
    }
    size_t pick = n;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        u -= d2[i];
        if (u < 0.0) break;
      }
    }
    if (pick == n) {
      // Every remaining point coincides with a center.
      for (size_t i = 0; i < n && pick == n; ++i)
        if (!chosen[i]) pick = i;
    }
    chosen[pick] = true;
    r.centers.push_back(points[pick]);
  }

  r.assignment.assign(n, -1);
  std::vector<double> cost(n, 0.0);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const int c = static_cast<int>(nearest(r.centers, points[i], &cost[i]));
      changed |= c != r.assignment[i];
      r.assignment[i] = c;
      inertia += cost[i];
    }
    r.inertia_history.push_back(inertia);
    r.inertia = inertia;
    r.iterations = iter + 1;
    if (!changed) break;

    std::vector<Vec> sums(kk, Vec(dim, 0.0));
    std::vector<size_t> counts(kk, 0);
    for (size_t i = 0; i < n; ++i) {
      const auto c = static_cast<size_t>(r.assignment[i]);
      ++counts[c];
      for (size_t d = 0; d < dim; ++d) sums[c][d] += points[i][d];
    }
    for (size_t c = 0; c < kk; ++c) {
      if (counts[c] > 0) {
        for (size_t d = 0; d < dim; ++d)
          r.centers[c][d] = sums[c][d] / static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: re-seed at the point currently paying the most.
      const size_t far = static_cast<size_t>(
          std::max_element(cost.begin(), cost.end()) - cost.begin());
      r.centers[c] = points[far];
      cost[far] = 0.0;
    }
  }
  return r;
}

std::vector<Example> select_exemplars(const std::vector<const Example*>& clean,
                                      const ModelState& main, int capacity,
                                      uint64_t seed) {
  if (clean.empty() || capacity < 1) return {};
  std::vector<Vec> features;
  features.reserve(clean.size());
  for (const Example* e : clean)
    features.push_back(encode(main, embed_input(main, e->input)));
  const KMeansResult km = kmeans(features, capacity, seed);

  std::vector<Example> out;
  for (size_t c = 0; c < km.centers.size(); ++c) {
    const Example* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < clean.size(); ++i) {
      if (km.assignment[i] != static_cast<int>(c)) continue;
      const double d = squared_distance(features[i], km.centers[c]);
      if (d < best_d || (d == best_d && best != nullptr && clean[i]->id < best->id)) {
        best_d = d;
        best = clean[i];
      }
    }
    if (best != nullptr) out.push_back(*best);
  }
  std::sort(out.begin(), out.end(),
            [](const Example& a, const Example& b) { return a.id < b.id; });
  return out;
}

size_t MemoryBuffer::total() const {
  size_t n = 0;
  for (const auto& [rel, ex] : store) n += ex.size();
  return n;
}

std::vector<Example> MemoryBuffer::all() const {
  std::vector<Example> out;
  for (const auto& [rel, ex] : store) out.insert(out.end(), ex.begin(), ex.end());
  return out;
}

BufferUpdate update_buffer(MemoryBuffer& buffer,
                           const std::vector<const Example*>& clean,
                           std::span<const int> task_relations,
                           const ModelState& main, uint64_t seed) {
  std::map<int, std::vector<const Example*>> by_relation;
  for (const Example* e : clean) by_relation[e->observed_label].push_back(e);

  BufferUpdate update;
  for (int rel : task_relations) {
    if (buffer.store.contains(rel))
      throw IntegrityError("relation " + std::to_string(rel) +
                           " is already stored in the memory buffer");
    const auto it = by_relation.find(rel);
    if (it == by_relation.end()) {
      update.skipped.push_back(rel);
      continue;
    }
    buffer.store[rel] = select_exemplars(
        it->second, main, buffer.capacity,
        derive_seed(seed, static_cast<uint64_t>(rel)));
    update.added.push_back(rel);
  }
  return update;
}

PrototypeSet compute_prototypes(const MemoryBuffer& buffer,
                                const ModelState& main) {
  PrototypeSet set;
  set.revision = main.revision;
  for (const auto& [rel, exemplars] : buffer.store) {
    if (exemplars.empty()) continue;
    Vec p;
    for (const Example& e : exemplars) {
      const Vec z = forward_main(main, e.input).z;
      if (p.empty()) p.assign(z.size(), 0.0);
      for (size_t d = 0; d < z.size(); ++d) p[d] += z[d];
    }
    for (auto& v : p) v /= static_cast<double>(exemplars.size());
    set.prototypes[rel] = std::move(p);
  }
  return set;
}

bool prototypes_stale(const PrototypeSet& prototypes, const ModelState& main) {
  return prototypes.revision != main.revision;
}

int ncm_predict(std::span<const double> z, const PrototypeSet& prototypes) {
  if (prototypes.prototypes.empty())
    throw StateError("ncm_predict: no prototypes");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& [rel, p] : prototypes.prototypes) {
    const double d = squared_distance(z, p);
    if (d < best_d) {
      best_d = d;
      best = rel;
    }
  }
  return best;
}

int ncm_predict(const Example& example, const PrototypeSet& prototypes,
                const ModelState& main) {
  return ncm_predict(forward_main(main, example.input).z, prototypes);
}

}  // namespace noisycre
