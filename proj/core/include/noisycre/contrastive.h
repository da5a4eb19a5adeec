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

// Noise-aware and replay contrastive objectives over projected features.
//
// For anchor i with positive set P(i) (same label, role clean or att-pos,
// i excluded) and contrast set A \ {i}:
//
//   L_i = -1/|P(i)| * sum_{j in P(i)} log( exp(z_i.z_j/tau) /
//                                          sum_{k in A\{i}} exp(z_i.z_k/tau) )
//
// The batch loss is the mean of L_i over anchors with non-empty P(i).

#ifndef NOISYCRE_CONTRASTIVE_H_
#define NOISYCRE_CONTRASTIVE_H_

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "noisycre/attack.h"
#include "noisycre/models.h"

namespace noisycre {

using ExampleIndex = std::unordered_map<int64_t, const Example*>;

ExampleIndex index_examples(const std::vector<Example>& examples);

struct ContrastBatch {
  std::vector<Vec> z;
  std::vector<int> labels;
  std::vector<PoolRole> roles;
  std::vector<size_t> anchors;  // indices into z; role must be kClean
  double temperature = 0.1;
  // Example ids of the members (informational, may be empty).
  std::vector<int64_t> ids;
};

struct ContrastLoss {
  double loss = 0.0;
  std::vector<Vec> grad_z;  // one per member
  size_t contributing = 0;
  size_t skipped = 0;       // anchors with an empty positive set
  bool degenerate() const { return contributing == 0; }
};

ContrastLoss nacl_loss(const ContrastBatch& batch);

// Replay objective over a buffer batch: every member is an anchor and every
// same-relation member is a positive.
ContrastLoss scl_loss(std::span<const Vec> z, std::span<const int> labels,
                      double temperature);

struct BatchPlan {
  std::vector<int64_t> anchors;     // clean ids
  std::vector<int64_t> companions;  // att-pos / neg ids
};

// ceil(|clean| / batch_size) batches of shuffled clean anchors. Companions
// from att_pos and neg are shuffled once per epoch and spread evenly over the
// batches, at most batch_size per batch, each used at most once.
std::vector<BatchPlan> plan_batches(const ContrastivePool& pool,
                                    size_t batch_size, uint64_t seed);

// The main model's (possibly perturbed) embedded input for a pool member.
Matrix pool_input(const ModelState& main, const Example& example,
                  const ContrastivePool& pool);

PoolRole pool_role(const ContrastivePool& pool, int64_t id);

std::vector<ContrastBatch> make_batches(const ContrastivePool& pool,
                                        const ModelState& main,
                                        const ExampleIndex& examples,
                                        size_t batch_size, double temperature,
                                        uint64_t seed);

struct EpochStats {
  double mean_loss = 0.0;
  size_t batches = 0;
  size_t degenerate_batches = 0;
  size_t skipped_anchors = 0;
};

struct TrainStep {
  size_t batch_size = 16;
  double temperature = 0.1;
  double lr = 1e-3;
};

// One epoch of noise-aware contrastive training over the pool.
EpochStats train_pool_epoch(ModelState& main, const ContrastivePool& pool,
                            const ExampleIndex& examples, const TrainStep& step,
                            uint64_t seed);

// One epoch of replay training over buffer exemplars.
EpochStats train_replay_epoch(ModelState& main,
                              const std::vector<Example>& exemplars,
                              const TrainStep& step, uint64_t seed);

}  // namespace noisycre

#endif  // NOISYCRE_CONTRASTIVE_H_
