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

#include "noisycre/contrastive.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace noisycre {

namespace {

ContrastLoss contrast(std::span<const Vec> z, std::span<const int> labels,
                      const std::vector<bool>& positive_eligible,
                      std::span<const size_t> anchors, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
  const size_t n = z.size();
  if (labels.size() != n || positive_eligible.size() != n)
    throw ValidationError("contrast batch: member arrays differ in length");

  ContrastLoss out;
  out.grad_z.assign(n, Vec(n > 0 ? z[0].size() : 0, 0.0));
  std::vector<double> sims(n);
  std::vector<size_t> positives;
  for (size_t i : anchors) {
    if (i >= n) throw ValidationError("anchor index out of range");
    positives.clear();
    for (size_t j = 0; j < n; ++j)
      if (j != i && labels[j] == labels[i] && positive_eligible[j])
        positives.push_back(j);
    if (positives.empty()) {
      ++out.skipped;
      continue;
    }
    ++out.contributing;

    double mx = -std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      sims[k] = dot(z[i], z[k]) / tau;
      mx = std::max(mx, sims[k]);
    }
    double sum = 0.0;
    for (size_t k = 0; k < n; ++k)
      if (k != i) sum += std::exp(sims[k] - mx);
    const double lse = mx + std::log(sum);
    const double inv_p = 1.0 / static_cast<double>(positives.size());
    double pos_mean = 0.0;
    for (size_t j : positives) pos_mean += sims[j];
    pos_mean *= inv_p;
    out.loss += lse - pos_mean;

    Vec& gi = out.grad_z[i];
    for (size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      const double w = std::exp(sims[k] - lse) / tau;
      for (size_t d = 0; d < gi.size(); ++d) {
        gi[d] += w * z[k][d];
        out.grad_z[k][d] += w * z[i][d];
      }
    }
    const double c = inv_p / tau;
    for (size_t j : positives) {
      for (size_t d = 0; d < gi.size(); ++d) {
        gi[d] -= c * z[j][d];
        out.grad_z[j][d] -= c * z[i][d];
      }
    }
  }
  if (out.contributing > 0) {
    const double inv = 1.0 / static_cast<double>(out.contributing);
    out.loss *= inv;
    for (auto& g : out.grad_z)
      for (auto& v : g) v *= inv;
  }
  return out;
}

// Forward every member, evaluate the loss, back-propagate, and take one Adam
// step. Degenerate batches leave the model untouched.
template <typename LossFn>
double train_on(ModelState& main, const std::vector<Matrix>& inputs,
                const std::vector<const Example*>& sources, LossFn&& loss_fn,
                double lr, ContrastLoss* result) {
  std::vector<MainTrace> traces(inputs.size());
  std::vector<Vec> z(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    forward_main(main, inputs[i], &traces[i]);
    // Unperturbed token inputs also train the embedding table.
    if (sources[i] != nullptr && sources[i]->input.kind == InputKind::kTokens) {
      traces[i].enc.from_tokens = true;
      traces[i].enc.tokens = sources[i]->input.tokens;
      traces[i].enc.head = sources[i]->input.head;
      traces[i].enc.tail = sources[i]->input.tail;
    }
    z[i] = traces[i].z;
  }
  *result = loss_fn(z);
  if (result->degenerate()) return 0.0;
  Vec grads(main.params.size(), 0.0);
  for (size_t i = 0; i < inputs.size(); ++i)
    backward_main(main, traces[i], result->grad_z[i], {}, grads);
  optimizer_step(main, grads, lr);
  return result->loss;
}

}  // namespace

ExampleIndex index_examples(const std::vector<Example>& examples) {
  ExampleIndex index;
  index.reserve(examples.size());
  for (const auto& e : examples) index.emplace(e.id, &e);
  return index;
}

ContrastLoss nacl_loss(const ContrastBatch& batch) {
  const size_t n = batch.z.size();
  if (batch.roles.size() != n)
    throw ValidationError("contrast batch: roles and features differ in length");
  std::vector<bool> eligible(n);
  for (size_t i = 0; i < n; ++i) eligible[i] = batch.roles[i] != PoolRole::kNeg;
  for (size_t a : batch.anchors)
    if (a >= n || batch.roles[a] != PoolRole::kClean)
      throw InvariantError("anchors must be clean pool members");
  return contrast(batch.z, batch.labels, eligible, batch.anchors,
                  batch.temperature);
}

ContrastLoss scl_loss(std::span<const Vec> z, std::span<const int> labels,
                      double temperature) {
  std::vector<size_t> anchors(z.size());
  std::iota(anchors.begin(), anchors.end(), size_t{0});
  return contrast(z, labels, std::vector<bool>(z.size(), true), anchors,
                  temperature);
}

std::vector<BatchPlan> plan_batches(const ContrastivePool& pool,
                                    size_t batch_size, uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  Rng rng(derive_seed(seed, 0xBA7C));
  std::vector<int64_t> clean = pool.clean;
  std::shuffle(clean.begin(), clean.end(), rng);
  std::vector<int64_t> companions = pool.att_pos;
  companions.insert(companions.end(), pool.neg.begin(), pool.neg.end());
  std::sort(companions.begin(), companions.end());
  std::shuffle(companions.begin(), companions.end(), rng);

  const size_t n_batches = (clean.size() + batch_size - 1) / batch_size;
  std::vector<BatchPlan> plans(n_batches);
  for (size_t b = 0; b < n_batches; ++b) {
    const size_t lo = b * batch_size;
    const size_t hi = std::min(clean.size(), lo + batch_size);
    plans[b].anchors.assign(clean.begin() + static_cast<ptrdiff_t>(lo),
                            clean.begin() + static_cast<ptrdiff_t>(hi));
    const size_t c_lo = b * companions.size() / n_batches;
    const size_t c_hi =
        std::min((b + 1) * companions.size() / n_batches, c_lo + batch_size);
    plans[b].companions.assign(
        companions.begin() + static_cast<ptrdiff_t>(c_lo),
        companions.begin() + static_cast<ptrdiff_t>(c_hi));
  }
  return plans;
}

Matrix pool_input(const ModelState& main, const Example& example,
                  const ContrastivePool& pool) {
  Matrix x = embed_input(main, example.input);
  const auto it = pool.perturbations.find(example.id);
  if (it != pool.perturbations.end()) {
    if (it->second.rows() != x.rows() || it->second.cols() != x.cols())
      throw IntegrityError("perturbation shape mismatch for example " +
                           std::to_string(example.id));
    for (size_t i = 0; i < x.size(); ++i) x.data()[i] += it->second.data()[i];
  }
  return x;
}

PoolRole pool_role(const ContrastivePool& pool, int64_t id) {
  if (std::binary_search(pool.att_pos.begin(), pool.att_pos.end(), id))
    return PoolRole::kAttPos;
  if (std::binary_search(pool.neg.begin(), pool.neg.end(), id))
    return PoolRole::kNeg;
  return PoolRole::kClean;
}

std::vector<ContrastBatch> make_batches(const ContrastivePool& pool,
                                        const ModelState& main,
                                        const ExampleIndex& examples,
                                        size_t batch_size, double temperature,
                                        uint64_t seed) {
  std::vector<ContrastBatch> batches;
  for (const BatchPlan& plan : plan_batches(pool, batch_size, seed)) {
    ContrastBatch batch;
    batch.temperature = temperature;
    auto add = [&](int64_t id, PoolRole role) {
      const Example& e = *examples.at(id);
      batch.z.push_back(forward_main(main, pool_input(main, e, pool)).z);
      batch.labels.push_back(e.observed_label);
      batch.roles.push_back(role);
      batch.ids.push_back(id);
    };
    for (int64_t id : plan.anchors) {
      batch.anchors.push_back(batch.z.size());
      add(id, PoolRole::kClean);
    }
    for (int64_t id : plan.companions) add(id, pool_role(pool, id));
    batches.push_back(std::move(batch));
  }
  return batches;
}

EpochStats train_pool_epoch(ModelState& main, const ContrastivePool& pool,
                            const ExampleIndex& examples, const TrainStep& step,
                            uint64_t seed) {
  EpochStats stats;
  double loss_sum = 0.0;
  for (const BatchPlan& plan : plan_batches(pool, step.batch_size, seed)) {
    std::vector<Matrix> inputs;
    std::vector<const Example*> sources;
    std::vector<int> labels;
    std::vector<PoolRole> roles;
    auto add = [&](int64_t id, PoolRole role) {
      const Example* e = examples.at(id);
      inputs.push_back(pool_input(main, *e, pool));
      const bool perturbed = pool.perturbations.contains(id);
      sources.push_back(perturbed ? nullptr : e);
      labels.push_back(e->observed_label);
      roles.push_back(role);
    };
    for (int64_t id : plan.anchors) add(id, PoolRole::kClean);
    for (int64_t id : plan.companions) add(id, pool_role(pool, id));
    std::vector<size_t> anchors(plan.anchors.size());
    std::iota(anchors.begin(), anchors.end(), size_t{0});

    ContrastLoss result;
    loss_sum += train_on(
        main, inputs, sources,
        [&](const std::vector<Vec>& z) {
          ContrastBatch batch{z, labels, roles, anchors, step.temperature, {}};
          return nacl_loss(batch);
        },
        step.lr, &result);
    ++stats.batches;
    stats.skipped_anchors += result.skipped;
    if (result.degenerate()) ++stats.degenerate_batches;
  }
  const size_t used = stats.batches - stats.degenerate_batches;
  stats.mean_loss = used > 0 ? loss_sum / static_cast<double>(used) : 0.0;
  return stats;
}

EpochStats train_replay_epoch(ModelState& main,
                              const std::vector<Example>& exemplars,
                              const TrainStep& step, uint64_t seed) {
  if (step.batch_size == 0) throw ConfigError("batch size must be >= 1");
  EpochStats stats;
  Rng rng(derive_seed(seed, 0x4E9));
  std::vector<size_t> order(exemplars.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  double loss_sum = 0.0;
  for (size_t lo = 0; lo < order.size(); lo += step.batch_size) {
    const size_t hi = std::min(order.size(), lo + step.batch_size);
    std::vector<Matrix> inputs;
    std::vector<const Example*> sources;
    std::vector<int> labels;
    for (size_t k = lo; k < hi; ++k) {
      const Example& e = exemplars[order[k]];
      inputs.push_back(embed_input(main, e.input));
      sources.push_back(&e);
      labels.push_back(e.observed_label);
    }
    ContrastLoss result;
    loss_sum += train_on(
        main, inputs, sources,
        [&](const std::vector<Vec>& z) {
          return scl_loss(z, labels, step.temperature);
        },
        step.lr, &result);
    ++stats.batches;
    stats.skipped_anchors += result.skipped;
    if (result.degenerate()) ++stats.degenerate_batches;
  }
  const size_t used = stats.batches - stats.degenerate_batches;
  stats.mean_loss = used > 0 ? loss_sum / static_cast<double>(used) : 0.0;
  return stats;
}

}  // namespace noisycre
