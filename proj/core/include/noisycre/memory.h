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

#ifndef NOISYCRE_MEMORY_H_
#define NOISYCRE_MEMORY_H_

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "noisycre/datastream.h"
#include "noisycre/models.h"

namespace noisycre {

struct KMeansResult {
  std::vector<int> assignment;
  std::vector<Vec> centers;
  // Inertia after every assignment step; non-increasing.
  std::vector<double> inertia_history;
  double inertia = 0.0;
  int iterations = 0;
};

// k-means++ seeding followed by Lloyd iterations until the assignment stops
// changing or max_iter is reached. k is lowered to |points| when larger.
// Ties go to the lowest center index.
KMeansResult kmeans(std::span<const Vec> points, int k, uint64_t seed,
                    int max_iter = 100);

// Up to `capacity` exemplars: one per K-Means cluster of the E_M features,
// the member closest to its center (ties to the lowest example id). Returned
// sorted by id.
std::vector<Example> select_exemplars(const std::vector<const Example*>& clean,
                                      const ModelState& main, int capacity,
                                      uint64_t seed);

struct MemoryBuffer {
  int capacity = 20;
  std::map<int, std::vector<Example>> store;

  size_t total() const;
  std::vector<Example> all() const;
};

struct BufferUpdate {
  std::vector<int> added;    // relations inserted
  std::vector<int> skipped;  // task relations with no clean examples
};

// Inserts exemplars for every relation present in `clean` (grouped by
// observed label). Re-inserting a stored relation raises IntegrityError.
BufferUpdate update_buffer(MemoryBuffer& buffer,
                           const std::vector<const Example*>& clean,
                           std::span<const int> task_relations,
                           const ModelState& main, uint64_t seed);

struct PrototypeSet {
  std::map<int, Vec> prototypes;
  uint64_t revision = 0;  // model revision the features came from
};

// p_r = mean of the projected features of r's exemplars (not re-normalized).
PrototypeSet compute_prototypes(const MemoryBuffer& buffer,
                                const ModelState& main);

bool prototypes_stale(const PrototypeSet& prototypes, const ModelState& main);

// argmin_r |z - p_r|, ties to the lowest relation id.
int ncm_predict(std::span<const double> z, const PrototypeSet& prototypes);
int ncm_predict(const Example& example, const PrototypeSet& prototypes,
                const ModelState& main);

}  // namespace noisycre

#endif  // NOISYCRE_MEMORY_H_
