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

#include "noisycre/attack.h"

#include <algorithm>
#include <cmath>

namespace noisycre {

namespace {

constexpr double kProbFloor = 1e-12;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double max_abs(const Matrix& m) {
  double mx = 0.0;
  for (double v : m.data()) mx = std::max(mx, std::abs(v));
  return mx;
}

}  // namespace

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw ValidationError("kl_divergence: length mismatch");
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double pi = std::max(p[i], kProbFloor);
    const double qi = std::max(q[i], kProbFloor);
    kl += pi * std::log(pi / qi);
  }
  return kl;
}

double attack_objective(const ModelState& aux, const Matrix& clean,
                        const Matrix& perturbed, int target, double lambda,
                        Matrix* grad) {
  const AuxOutput ref = forward_aux(aux, clean);
  AuxTrace trace;
  forward_aux(aux, perturbed, &trace);
  const auto t = static_cast<size_t>(target);
  if (t >= trace.probs.size())
    throw ValidationError("attack target outside the classifier's range");

  const double mx = *std::max_element(trace.logits.begin(), trace.logits.end());
  double sum = 0.0;
  for (double l : trace.logits) sum += std::exp(l - mx);
  const double ce = mx + std::log(sum) - trace.logits[t];
  const double value = ce + lambda * kl_divergence(ref.probs, trace.probs);

  if (grad != nullptr) {
    // d/dlogits' of CE is q - e_t; of KL(p || q) it is q - p.
    Vec d_logits(trace.probs.size());
    for (size_t i = 0; i < d_logits.size(); ++i)
      d_logits[i] = (trace.probs[i] - (i == t ? 1.0 : 0.0)) +
                    lambda * (trace.probs[i] - ref.probs[i]);
    backward_aux(aux, trace, d_logits, {}, grad);
  }
  return value;
}

AttackResult noise_guided_attack(const ModelState& aux, const Matrix& embedded,
                                 int target, const AttackConfig& config,
                                 uint64_t seed, AttackTrace* trace) {
  if (!(config.epsilon > 0.0)) throw ConfigError("attack epsilon must be > 0");
  if (config.steps < 0) throw ConfigError("attack steps must be >= 0");
  const double eps = config.epsilon;
  const double step = config.step_size.value_or(eps);

  Rng rng(seed);
  std::uniform_real_distribution<double> init(-eps, eps);
  Matrix delta(embedded.rows(), embedded.cols());
  for (auto& v : delta.data()) v = init(rng);

  auto perturbed_from = [&](const Matrix& d) {
    Matrix x = embedded;
    for (size_t i = 0; i < x.size(); ++i) x.data()[i] += d.data()[i];
    return x;
  };
  auto record = [&](const Matrix& x, const Matrix& d) {
    if (trace == nullptr) return;
    trace->target_prob.push_back(
        forward_aux(aux, x).probs[static_cast<size_t>(target)]);
    trace->max_abs_delta.push_back(max_abs(d));
  };

  Matrix x = perturbed_from(delta);
  record(x, delta);
  Matrix grad;
  for (int s = 0; s < config.steps; ++s) {
    attack_objective(aux, embedded, x, target, config.lambda, &grad);
    if (!all_finite(grad.data()))
      throw NumericalError("non-finite input gradient during attack");
    // x - step * sign(g), clipped into [x - eps, x + eps]; kept as an offset
    // so the ball constraint holds exactly.
    for (size_t i = 0; i < delta.size(); ++i)
      delta.data()[i] = std::clamp(-step * sign(grad.data()[i]), -eps, eps);
    x = perturbed_from(delta);
    record(x, delta);
  }
  return {std::move(x), std::move(delta)};
}

CentroidStats compute_centroid_stats(const ModelState& main,
                                     const std::vector<const Example*>& clean) {
  std::map<int, std::vector<Vec>> reps;
  for (const Example* e : clean)
    reps[e->observed_label].push_back(encode(main, embed_input(main, e->input)));

  CentroidStats stats;
  for (const auto& [rel, hs] : reps) {
    Vec c(hs.front().size(), 0.0);
    for (const auto& h : hs)
      for (size_t i = 0; i < c.size(); ++i) c[i] += h[i];
    for (auto& v : c) v /= static_cast<double>(hs.size());
    double d_max = 0.0;
    for (const auto& h : hs)
      d_max = std::max(d_max, std::sqrt(squared_distance(h, c)));
    stats.centroids[rel] = std::move(c);
    stats.d_max[rel] = d_max;
  }
  return stats;
}

AsrResult attack_success_rate(std::span<const RepresentedSample> samples,
                              const CentroidStats& stats) {
  AsrResult result;
  if (samples.empty()) return result;
  size_t hits = 0;
  for (const auto& s : samples) {
    bool ok = false;
    const auto c = stats.centroids.find(s.relation);
    const auto r = stats.d_max.find(s.relation);
    if (c != stats.centroids.end() && r != stats.d_max.end())
      ok = std::sqrt(squared_distance(s.hidden, c->second)) <= r->second;
    result.success[s.id] = ok;
    hits += ok ? 1 : 0;
  }
  result.asr = static_cast<double>(hits) / static_cast<double>(samples.size());
  return result;
}

AsrResult attack_success_rate(const ModelState& main,
                              const std::vector<const Example*>& noisy,
                              const std::map<int64_t, Matrix>& perturbations,
                              const CentroidStats& stats) {
  std::vector<RepresentedSample> samples;
  samples.reserve(noisy.size());
  for (const Example* e : noisy) {
    Matrix x = embed_input(main, e->input);
    const auto it = perturbations.find(e->id);
    if (it == perturbations.end())
      throw IntegrityError("no perturbation recorded for noisy example " +
                           std::to_string(e->id));
    for (size_t i = 0; i < x.size(); ++i) x.data()[i] += it->second.data()[i];
    samples.push_back({e->id, e->observed_label, encode(main, x)});
  }
  return attack_success_rate(samples, stats);
}

ContrastivePool build_pool(const SelectionResult& selection,
                           const std::map<int64_t, bool>& success,
                           const std::map<int64_t, Matrix>& perturbations) {
  ContrastivePool pool;
  pool.clean = selection.clean;
  for (int64_t id : selection.noisy) {
    const auto flag = success.find(id);
    if (flag == success.end())
      throw IntegrityError("no attack outcome for noisy example " +
                           std::to_string(id));
    const auto delta = perturbations.find(id);
    if (delta == perturbations.end())
      throw IntegrityError("missing perturbed input for noisy example " +
                           std::to_string(id));
    (flag->second ? pool.att_pos : pool.neg).push_back(id);
    pool.perturbations.emplace(id, delta->second);
  }
  return pool;
}

}  // namespace noisycre
