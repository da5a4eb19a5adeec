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

#include "noisycre/denoise.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace noisycre {

namespace {

int local_index(std::span<const int> relations, int label) {
  const auto it = std::lower_bound(relations.begin(), relations.end(), label);
  if (it == relations.end() || *it != label)
    throw InvariantError("observed label " + std::to_string(label) +
                         " is outside the current task's relation set");
  return static_cast<int>(it - relations.begin());
}

}  // namespace

AuxLoss aux_ce_loss(const ModelState& aux,
                    std::span<const Example* const> batch,
                    std::span<const int> task_relations) {
  if (batch.empty()) throw ValidationError("aux_ce_loss: empty batch");
  AuxLoss out;
  out.param_grad.assign(aux.params.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(batch.size());
  AuxTrace trace;
  for (const Example* e : batch) {
    const int target = local_index(task_relations, e->observed_label);
    forward_aux(aux, e->input, &trace);
    // -log softmax(l)_t computed as logsumexp(l) - l_t
    const double mx = *std::max_element(trace.logits.begin(), trace.logits.end());
    double sum = 0.0;
    for (double l : trace.logits) sum += std::exp(l - mx);
    out.loss += (mx + std::log(sum) - trace.logits[static_cast<size_t>(target)]) * inv;

    Vec d_logits = trace.probs;
    d_logits[static_cast<size_t>(target)] -= 1.0;
    for (auto& g : d_logits) g *= inv;
    backward_aux(aux, trace, d_logits, out.param_grad);
  }
  return out;
}

ModelState train_auxiliary(const std::vector<Example>& data,
                           std::span<const int> task_relations,
                           const EncoderConfig& encoder,
                           const SelectionConfig& config, uint64_t seed,
                           const ModelState* warm_start) {
  if (data.empty()) throw ConfigError("train_auxiliary: empty task dataset");
  if (config.batch_size < 1 || config.aux_epochs < 0)
    throw ConfigError("train_auxiliary: invalid batch size or epoch count");
  const int n_classes = static_cast<int>(task_relations.size());

  ModelState aux = init_model(ModelRole::kAuxiliary, encoder, n_classes,
                              derive_seed(seed, 0xA0));
  if (warm_start != nullptr) {
    if (warm_start->role != ModelRole::kAuxiliary ||
        warm_start->config != encoder)
      throw ConfigError("warm start model is incompatible");
    if (warm_start->n_classes() == n_classes) {
      aux.params = warm_start->params;
    } else {
      for (const auto& s : aux.slices) {
        if (s.name.starts_with("cls.")) continue;
        const auto src = warm_start->values(s.name);
        std::copy(src.begin(), src.end(), aux.values(s.name).begin());
      }
    }
  }

  Rng rng(derive_seed(seed, 0xA1));
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<const Example*> batch;
  const auto bs = static_cast<size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.aux_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (size_t i = start; i < std::min(order.size(), start + bs); ++i)
        batch.push_back(&data[order[i]]);
      const AuxLoss loss = aux_ce_loss(aux, batch, task_relations);
      optimizer_step(aux, loss.param_grad, config.lr);
    }
  }
  return aux;
}

SelectionResult select_clean(const ModelState& aux,
                             const std::vector<Example>& data,
                             std::span<const int> task_relations, double gamma,
                             ConfidenceRule rule) {
  SelectionResult result;
  result.gamma = gamma;
  for (const auto& e : data) {
    const AuxOutput out = forward_aux(aux, e.input);
    const double p =
        rule == ConfidenceRule::kObservedLabel
            ? out.probs[static_cast<size_t>(
                  local_index(task_relations, e.observed_label))]
            : *std::max_element(out.probs.begin(), out.probs.end());
    result.confidences[e.id] = p;
    (p >= gamma ? result.clean : result.noisy).push_back(e.id);
  }
  std::sort(result.clean.begin(), result.clean.end());
  std::sort(result.noisy.begin(), result.noisy.end());
  return result;
}

SelectionQuality selection_quality(const SelectionResult& result,
                                   const std::vector<Example>& data) {
  SelectionQuality q;
  const std::unordered_set<int64_t> clean(result.clean.begin(),
                                          result.clean.end());
  for (const auto& e : data) {
    const bool selected = clean.contains(e.id);
    q.selected += selected ? 1 : 0;
    if (!e.is_corrupted) {
      ++q.truly_clean;
      q.selected_truly_clean += selected ? 1 : 0;
    }
  }
  if (q.selected > 0)
    q.precision = static_cast<double>(q.selected_truly_clean) / q.selected;
  if (q.truly_clean > 0)
    q.recall = static_cast<double>(q.selected_truly_clean) / q.truly_clean;
  return q;
}

std::optional<double> confidence_separation(const SelectionResult& result,
                                            const std::vector<Example>& data) {
  double clean_sum = 0.0, noisy_sum = 0.0;
  size_t clean_n = 0, noisy_n = 0;
  for (const auto& e : data) {
    const auto it = result.confidences.find(e.id);
    if (it == result.confidences.end()) continue;
    if (e.is_corrupted) {
      noisy_sum += it->second;
      ++noisy_n;
    } else {
      clean_sum += it->second;
      ++clean_n;
    }
  }
  if (clean_n == 0 || noisy_n == 0) return std::nullopt;
  return clean_sum / clean_n - noisy_sum / noisy_n;
}

nlohmann::json selection_audit(const SelectionResult& result,
                               const std::vector<Example>& data) {
  const std::unordered_set<int64_t> clean(result.clean.begin(),
                                          result.clean.end());
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : data) {
    const auto it = result.confidences.find(e.id);
    if (it == result.confidences.end()) continue;
    rows.push_back({{"id", e.id},
                    {"confidence", it->second},
                    {"set", clean.contains(e.id) ? "clean" : "noisy"},
                    {"corrupted", e.is_corrupted}});
  }
  return rows;
}

}  // namespace noisycre
