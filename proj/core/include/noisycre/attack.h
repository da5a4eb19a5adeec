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

// Noise-guided targeted attack on the auxiliary model's input embeddings,
// attack success scoring against clean relation radii in the main encoder's
// space, and contrastive pool assembly.

#ifndef NOISYCRE_ATTACK_H_
#define NOISYCRE_ATTACK_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "noisycre/datastream.h"
#include "noisycre/denoise.h"
#include "noisycre/models.h"

namespace noisycre {

struct AttackConfig {
  double epsilon = 0.1;
  int steps = 5;
  // Weight of KL(f_A(x) || f_A(x')). Signed: the update descends on
  // J + lambda * KL, so a negative lambda pushes x' away from x's prediction.
  double lambda = 0.1;
  // Sign-step multiplier; defaults to epsilon.
  std::optional<double> step_size;
};

// KL(p || q) with both vectors floored at 1e-12.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Attack objective J(x', target) + lambda * KL(f_A(x) || f_A(x')) and its
// gradient w.r.t. the perturbed embedded input x'.
double attack_objective(const ModelState& aux, const Matrix& clean,
                        const Matrix& perturbed, int target, double lambda,
                        Matrix* grad = nullptr);

struct AttackTrace {
  // Target-class probability after the random start (index 0) and after each
  // step (index i).
  std::vector<double> target_prob;
  // max |x' - x| after the random start and after each step.
  std::vector<double> max_abs_delta;
};

struct AttackResult {
  Matrix perturbed;
  Matrix delta;  // perturbed - clean, every entry within [-eps, eps]
};

// x' = x + U(-eps, eps); then `steps` times
//   x' <- Pi_eps(x - step * sign(grad_{x'} objective(x')))
// where Pi_eps clips into the elementwise eps-ball around x.
AttackResult noise_guided_attack(const ModelState& aux, const Matrix& embedded,
                                 int target, const AttackConfig& config,
                                 uint64_t seed, AttackTrace* trace = nullptr);

struct CentroidStats {
  std::map<int, Vec> centroids;
  std::map<int, double> d_max;
};

// Relation centroids and radii of the clean examples in E_M space (keyed by
// observed label).
CentroidStats compute_centroid_stats(const ModelState& main,
                                     const std::vector<const Example*>& clean);

struct RepresentedSample {
  int64_t id = 0;
  int relation = 0;  // observed label
  Vec hidden;        // E_M(x')
};

struct AsrResult {
  std::optional<double> asr;  // undefined when there is nothing to score
  std::map<int64_t, bool> success;
};

// success iff |hidden - c_r| <= d_max[r]; relations with no clean centroid
// count as failures and stay in the denominator.
AsrResult attack_success_rate(std::span<const RepresentedSample> samples,
                              const CentroidStats& stats);

AsrResult attack_success_rate(const ModelState& main,
                              const std::vector<const Example*>& noisy,
                              const std::map<int64_t, Matrix>& perturbations,
                              const CentroidStats& stats);

enum class PoolRole { kClean, kAttPos, kNeg };

struct ContrastivePool {
  std::vector<int64_t> clean;
  std::vector<int64_t> att_pos;
  std::vector<int64_t> neg;
  // Additive perturbation applied on top of the main model's embedding of
  // the example. Absent entries mean "use the original input".
  std::map<int64_t, Matrix> perturbations;
};

ContrastivePool build_pool(const SelectionResult& selection,
                           const std::map<int64_t, bool>& success,
                           const std::map<int64_t, Matrix>& perturbations);

}  // namespace noisycre

#endif  // NOISYCRE_ATTACK_H_
