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

// Rebooted clean-sample selection: a freshly initialized auxiliary classifier
// is trained on the current task's (noisy) labels and its confidence in each
// observed label splits the task into pseudo-clean and pseudo-noisy sets.

#ifndef NOISYCRE_DENOISE_H_
#define NOISYCRE_DENOISE_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "noisycre/datastream.h"
#include "noisycre/models.h"

namespace noisycre {

struct SelectionConfig {
  double gamma = 0.6;
  int aux_epochs = 3;
  int batch_size = 16;
  double lr = 1e-3;
};

enum class ConfidenceRule {
  kObservedLabel,   // p(observed label | x)
  kMaxProbability,  // max_c p(c | x)
};

struct SelectionResult {
  double gamma = 0.0;
  std::vector<int64_t> clean;  // ascending ids
  std::vector<int64_t> noisy;  // ascending ids
  std::map<int64_t, double> confidences;
};

struct AuxLoss {
  double loss = 0.0;
  Vec param_grad;
};

// Mean cross-entropy of the observed (task-local) labels over the batch.
// `task_relations` is the sorted relation set of the current task; an observed
// label outside it raises InvariantError.
AuxLoss aux_ce_loss(const ModelState& aux,
                    std::span<const Example* const> batch,
                    std::span<const int> task_relations);

// Fresh auxiliary model trained for config.aux_epochs epochs of shuffled
// minibatch CE. With `warm_start` the encoder (and classifier, when the class
// count matches) is copied from a previous model instead; that path exists
// only for the reboot diagnostic.
ModelState train_auxiliary(const std::vector<Example>& data,
                           std::span<const int> task_relations,
                           const EncoderConfig& encoder,
                           const SelectionConfig& config, uint64_t seed,
                           const ModelState* warm_start = nullptr);

SelectionResult select_clean(
    const ModelState& aux, const std::vector<Example>& data,
    std::span<const int> task_relations, double gamma,
    ConfidenceRule rule = ConfidenceRule::kObservedLabel);

struct SelectionQuality {
  std::optional<double> precision;  // undefined when the clean set is empty
  std::optional<double> recall;     // undefined when nothing is truly clean
  size_t selected = 0;
  size_t selected_truly_clean = 0;
  size_t truly_clean = 0;
};

SelectionQuality selection_quality(const SelectionResult& result,
                                   const std::vector<Example>& data);

// Mean confidence of truly clean examples minus that of truly corrupted ones.
std::optional<double> confidence_separation(const SelectionResult& result,
                                            const std::vector<Example>& data);

// Per-example audit rows: id, confidence, assigned set, true flag.
nlohmann::json selection_audit(const SelectionResult& result,
                               const std::vector<Example>& data);

}  // namespace noisycre

#endif  // NOISYCRE_DENOISE_H_
