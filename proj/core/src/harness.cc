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

#include "noisycre/harness.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace noisycre {

using json = nlohmann::json;

namespace {

// Seed stream tags.
constexpr uint64_t kSeedData = 1;
constexpr uint64_t kSeedSplit = 2;
constexpr uint64_t kSeedNoise = 3;
constexpr uint64_t kSeedPartition = 4;
constexpr uint64_t kSeedOod = 5;
constexpr uint64_t kSeedMain = 10;
constexpr uint64_t kSeedAux = 11;
constexpr uint64_t kSeedAttack = 12;
constexpr uint64_t kSeedPool = 13;
constexpr uint64_t kSeedReplay = 14;
constexpr uint64_t kSeedBuffer = 15;
constexpr uint64_t kSeedFinetune = 16;
constexpr uint64_t kSeedJoint = 17;

constexpr int64_t kOodIdOffset = int64_t{1} << 40;

const std::vector<std::pair<Method, const char*>>& method_names() {
  static const std::vector<std::pair<Method, const char*>> names = {
      {Method::kNacl, "nacl"},
      {Method::kDiscard, "discard"},
      {Method::kNoiseRetain, "noise-retain"},
      {Method::kFinetune, "finetune"},
      {Method::kJoint, "joint"}};
  return names;
}

// Index of the listed rate (10%, 30%, 50%) nearest to `rate`; ties go to the
// lower rate.
size_t nearest_rate(double rate) {
  constexpr double kRates[] = {0.1, 0.3, 0.5};
  size_t best = 0;
  for (size_t i = 1; i < 3; ++i)
    if (std::abs(kRates[i] - rate) < std::abs(kRates[best] - rate)) best = i;
  return best;
}

template <typename T>
void read_key(const json& obj, const char* key, T& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

template <typename T>
void read_optional(const json& obj, const char* key, std::optional<T>& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if (it->is_null()) {
    out.reset();
    return;
  }
  T v{};
  read_key(obj, key, v);
  out = v;
}

void check_keys(const json& obj, const char* section,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object())
    throw ConfigError(std::string("config section '") + section +
                      "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
          return key == a;
        }) == allowed.end())
      throw ConfigError(std::string("unknown config key '") + section + "." +
                        key + "'");
  }
}

const json& section(const json& j, const char* name) {
  static const json empty = json::object();
  const auto it = j.find(name);
  return it == j.end() ? empty : *it;
}

json optional_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

const char* to_string(ConfidenceRule rule) {
  return rule == ConfidenceRule::kObservedLabel ? "observed-label"
                                                : "max-probability";
}

ConfidenceRule parse_confidence_rule(const std::string& name) {
  if (name == "observed-label") return ConfidenceRule::kObservedLabel;
  if (name == "max-probability") return ConfidenceRule::kMaxProbability;
  throw ConfigError("unknown confidence rule '" + name + "'");
}

EncoderConfig encoder_config(const RunConfig& config, const BuiltStream& built) {
  EncoderConfig enc;
  enc.kind = built.kind;
  enc.embed_dim = built.kind == InputKind::kVector ? built.input_dim
                                                   : config.embed_dim;
  enc.hidden_dim = config.hidden_dim;
  enc.out_dim = config.out_dim;
  enc.vocab_size = built.vocab_size;
  return enc;
}

std::vector<const Example*> pick(const std::vector<Example>& data,
                                 const std::vector<int64_t>& ids) {
  const ExampleIndex index = index_examples(data);
  std::vector<const Example*> out;
  out.reserve(ids.size());
  for (int64_t id : ids) out.push_back(index.at(id));
  return out;
}

double accuracy_of(size_t correct, size_t total) {
  return total == 0 ? 0.0
                    : static_cast<double>(correct) / static_cast<double>(total);
}

// Top two principal directions by power iteration with deflation.
json project_2d(const std::vector<Vec>& points, const std::vector<int>& labels,
                const std::vector<int64_t>& ids) {
  json out = json::array();
  if (points.empty()) return out;
  const size_t d = points[0].size();
  Vec mean(d, 0.0);
  for (const auto& p : points)
    for (size_t i = 0; i < d; ++i) mean[i] += p[i];
  for (auto& v : mean) v /= static_cast<double>(points.size());
  std::vector<Vec> centered = points;
  for (auto& p : centered)
    for (size_t i = 0; i < d; ++i) p[i] -= mean[i];

  std::vector<Vec> axes;
  for (int a = 0; a < 2; ++a) {
    Vec v(d, 0.0);
    v[static_cast<size_t>(a) % d] = 1.0;
    for (int it = 0; it < 200; ++it) {
      Vec next(d, 0.0);
      for (const auto& p : centered) {
        const double s = dot(p, v);
        for (size_t i = 0; i < d; ++i) next[i] += s * p[i];
      }
      for (const auto& prev : axes) {
        const double s = dot(next, prev);
        for (size_t i = 0; i < d; ++i) next[i] -= s * prev[i];
      }
      const double n = l2_norm(next);
      if (n == 0.0) break;
      for (auto& x : next) x /= n;
      v = std::move(next);
    }
    axes.push_back(std::move(v));
  }
  for (size_t k = 0; k < centered.size(); ++k)
    out.push_back({{"id", ids[k]},
                   {"relation", labels[k]},
                   {"x", dot(centered[k], axes[0])},
                   {"y", dot(centered[k], axes[1])}});
  return out;
}

class Runner {
 public:
  Runner(const RunConfig& config, const BuiltStream& built,
         const RunOptions& options)
      : config_(config),
        built_(built),
        options_(options),
        hyper_(resolve(config, built.kind)),
        encoder_(encoder_config(config, built)) {
    buffer_.capacity = config.capacity;
    if (config.method != Method::kFinetune) main_ = fresh_main(kSeedMain, 0);
    for (const auto& test : built.test_sets)
      for (const auto& e : test) test_ids_.insert(e.id);
    for (const auto& task : built.stream.tasks)
      for (const auto& e : task) train_ids_.insert(e.id);
    for (int64_t id : test_ids_)
      if (train_ids_.contains(id))
        throw IntegrityError("example " + std::to_string(id) +
                             " is in both a training and a test set");
  }

  RunResult run() {
    RunResult result;
    RunReport& report = result.report;
    report.method = to_string(config_.method);
    report.seed = config_.seed;
    report.config = config_to_json(config_);
    report.config["resolved"] = {{"gamma", hyper_.gamma},
                                 {"temperature", hyper_.temperature},
                                 {"lr", hyper_.lr}};
    for (const auto& t : built_.test_sets) report.test_sizes.push_back(t.size());

    const int n = built_.stream.n_tasks;
    for (int k = 0; k < n; ++k) {
      const auto t0 = std::chrono::steady_clock::now();
      TaskRecord record;
      json audit;
      run_task(k, record, audit);
      report.tasks.push_back(std::move(record));
      result.audits.push_back(std::move(audit));
      report.accuracy.push_back(phase("evaluate", k, [&] { return evaluate(k); }));
      const auto t1 = std::chrono::steady_clock::now();
      result.task_seconds.push_back(
          std::chrono::duration<double>(t1 - t0).count());
    }
    report.events = std::move(events_);
    report.last_accuracy = last_accuracy(report);
    report.normalized_forgetting = normalized_forgetting(report.accuracy);
    if (config_.dump_embeddings && config_.method != Method::kFinetune)
      result.embedding_dump = dump_embeddings();
    return result;
  }

 private:
  ModelState fresh_main(uint64_t tag, int task) const {
    ModelState m = init_model(ModelRole::kMain, encoder_, config_.proj_dim,
                              derive_seed(config_.seed, tag,
                                          static_cast<uint64_t>(task)),
                              config_.proj_hidden_dim);
    m.normalize_projection = config_.normalize_projection;
    return m;
  }

  template <typename Fn>
  auto phase(const char* name, int task, Fn&& fn) -> decltype(fn()) {
    events_.push_back({events_.size(), task, name});
    try {
      return fn();
    } catch (const PhaseError&) {
      throw;
    } catch (const std::exception& e) {
      if (!options_.failure_checkpoint.empty() && !main_.params.empty()) {
        try {
          save_checkpoint(main_, options_.failure_checkpoint);
        } catch (const std::exception&) {
        }
      }
      throw PhaseError(name, task, e.what());
    }
  }

  TrainStep step() const {
    return {static_cast<size_t>(config_.batch_size), hyper_.temperature,
            hyper_.lr};
  }

  SelectionConfig selection_config() const {
    SelectionConfig s;
    s.gamma = hyper_.gamma;
    s.aux_epochs = config_.aux_epochs;
    s.batch_size = config_.batch_size;
    s.lr = hyper_.lr;
    return s;
  }

  void run_task(int k, TaskRecord& record, json& audit) {
    const auto& data = built_.stream.tasks[static_cast<size_t>(k)];
    const auto& relations = built_.stream.task_relations[static_cast<size_t>(k)];
    record.task = k;
    record.n_train = data.size();
    audit = json::object();
    audit["task"] = k;
    if (data.empty()) throw PhaseError("aux", k, "task has no training data");
    switch (config_.method) {
      case Method::kFinetune:
        run_finetune(k, data, record);
        break;
      case Method::kJoint:
        run_joint(k, data, relations, record, audit);
        break;
      default:
        run_pipeline(k, data, relations, record, audit);
        break;
    }
  }

  void run_pipeline(int k, const std::vector<Example>& data,
                    const std::vector<int>& relations, TaskRecord& record,
                    json& audit) {
    const uint64_t task_seed =
        derive_seed(config_.seed, kSeedAux, static_cast<uint64_t>(k));
    ModelState aux = phase("aux", k, [&] {
      return train_auxiliary(data, relations, encoder_, selection_config(),
                             task_seed,
                             config_.reboot || !prev_aux_ ? nullptr
                                                          : &*prev_aux_);
    });

    const SelectionResult selection = phase("select", k, [&] {
      return select_clean(aux, data, relations, hyper_.gamma,
                          config_.confidence_rule);
    });
    const SelectionQuality quality = selection_quality(selection, data);
    record.gamma = selection.gamma;
    record.n_clean = selection.clean.size();
    record.n_noisy = selection.noisy.size();
    record.selected_truly_clean = quality.selected_truly_clean;
    record.truly_clean = quality.truly_clean;
    record.precision = quality.precision;
    record.recall = quality.recall;
    record.confidence_separation = confidence_separation(selection, data);
    audit["selection"] = selection_audit(selection, data);

    const std::vector<const Example*> clean = pick(data, selection.clean);
    const std::vector<const Example*> noisy = pick(data, selection.noisy);
    const ContrastivePool pool = phase("attack", k, [&] {
      return make_pool(k, aux, clean, noisy, selection, record, audit);
    });
    prev_aux_ = std::move(aux);

    const ExampleIndex index = index_examples(data);
    phase("train", k, [&] {
      for (int epoch = 0; epoch < config_.main_epochs; ++epoch) {
        const EpochStats s = train_pool_epoch(
            main_, pool, index, step(),
            derive_seed(config_.seed, kSeedPool,
                        static_cast<uint64_t>(k * 1000 + epoch)));
        record.losses.push_back({"nacl", epoch, s.mean_loss, s.batches,
                                 s.degenerate_batches, s.skipped_anchors});
      }
    });

    const bool gated = config_.literal_first_task_gate && k == 0;
    if (!gated) {
      phase("buffer", k, [&] {
        const BufferUpdate update = update_buffer(
            buffer_, clean, relations, main_,
            derive_seed(config_.seed, kSeedBuffer, static_cast<uint64_t>(k)));
        record.skipped_relations = update.skipped;
        skipped_.insert(update.skipped.begin(), update.skipped.end());
        for (const auto& [rel, ex] : buffer_.store)
          for (const auto& e : ex)
            if (!train_ids_.contains(e.id) || test_ids_.contains(e.id))
              throw IntegrityError("buffer exemplar " + std::to_string(e.id) +
                                   " is not a training example");
      });
    }
    if (k > 0 && !gated && buffer_.total() > 0) {
      phase("replay", k, [&] {
        const std::vector<Example> exemplars = buffer_.all();
        for (int epoch = 0; epoch < config_.main_epochs; ++epoch) {
          const EpochStats s = train_replay_epoch(
              main_, exemplars, step(),
              derive_seed(config_.seed, kSeedReplay,
                          static_cast<uint64_t>(k * 1000 + epoch)));
          record.losses.push_back({"replay", epoch, s.mean_loss, s.batches,
                                   s.degenerate_batches, s.skipped_anchors});
        }
      });
    }
    finish_memory(k, relations, record, audit);
  }

  ContrastivePool make_pool(int k, const ModelState& aux,
                            const std::vector<const Example*>& clean,
                            const std::vector<const Example*>& noisy,
                            const SelectionResult& selection,
                            TaskRecord& record, json& audit) {
    ContrastivePool pool;
    pool.clean = selection.clean;
    if (config_.method == Method::kDiscard || noisy.empty()) return pool;
    if (config_.method == Method::kNoiseRetain) {
      pool.neg = selection.noisy;
      return pool;
    }

    const uint64_t attack_seed =
        derive_seed(config_.seed, kSeedAttack, static_cast<uint64_t>(k));
    std::map<int64_t, Matrix> perturbations;
    double before = 0.0;
    double after = 0.0;
    double max_delta = 0.0;
    for (const Example* e : noisy) {
      AttackTrace trace;
      const int target = built_.stream.local_class(k, e->observed_label);
      AttackResult r = noise_guided_attack(
          aux, embed_input(aux, e->input), target, config_.attack,
          derive_seed(attack_seed, static_cast<uint64_t>(e->id)), &trace);
      before += trace.target_prob.front();
      after += trace.target_prob.back();
      for (double m : trace.max_abs_delta) max_delta = std::max(max_delta, m);
      perturbations.emplace(e->id, std::move(r.delta));
    }
    const double inv = 1.0 / static_cast<double>(noisy.size());
    record.target_prob_before = before * inv;
    record.target_prob_after = after * inv;
    record.max_abs_delta = max_delta;
    if (max_delta > config_.attack.epsilon)
      throw InvariantError("perturbation left the epsilon ball");

    const CentroidStats stats = compute_centroid_stats(main_, clean);
    const AsrResult asr =
        attack_success_rate(main_, noisy, perturbations, stats);
    record.asr = asr.asr;
    pool = build_pool(selection, asr.success, perturbations);
    record.att_pos = pool.att_pos.size();
    record.neg = pool.neg.size();
    json flags = json::array();
    for (const auto& [id, ok] : asr.success)
      flags.push_back({{"id", id}, {"success", ok}});
    audit["attack"] = {{"asr", optional_json(asr.asr)},
                       {"flags", std::move(flags)}};
    return pool;
  }

  void finish_memory(int k, const std::vector<int>& relations,
                     TaskRecord& record, json& audit) {
    phase("prototypes", k, [&] {
      prototypes_ = compute_prototypes(buffer_, main_);
      seen_.insert(relations.begin(), relations.end());
      for (const auto& [rel, p] : prototypes_.prototypes)
        if (!seen_.contains(rel))
          throw InvariantError("prototype for unseen relation " +
                               std::to_string(rel));
      if (!config_.literal_first_task_gate) {
        for (int rel : seen_)
          if (!skipped_.contains(rel) && !prototypes_.prototypes.contains(rel))
            throw InvariantError("no prototype for seen relation " +
                                 std::to_string(rel));
      }
    });
    record.buffer_size = buffer_.total();
    record.buffer_purity = buffer_purity(buffer_);
    audit["buffer"] = buffer_manifest(buffer_);
  }

  void run_finetune(int k, const std::vector<Example>& data,
                    TaskRecord& record) {
    phase("train", k, [&] {
      SelectionConfig s = selection_config();
      s.aux_epochs = config_.main_epochs;
      classifier_ = train_auxiliary(
          data, built_.relations, encoder_, s,
          derive_seed(config_.seed, kSeedFinetune, static_cast<uint64_t>(k)),
          classifier_ ? &*classifier_ : nullptr);
      std::vector<const Example*> all;
      for (const auto& e : data) all.push_back(&e);
      record.losses.push_back(
          {"ce", config_.main_epochs - 1,
           aux_ce_loss(*classifier_, all, built_.relations).loss, 0, 0, 0});
    });
    const auto& relations = built_.stream.task_relations[static_cast<size_t>(k)];
    seen_.insert(relations.begin(), relations.end());
  }

  void run_joint(int k, const std::vector<Example>& data,
                 const std::vector<int>& relations, TaskRecord& record,
                 json& audit) {
    seen_train_.insert(seen_train_.end(), data.begin(), data.end());
    phase("train", k, [&] {
      main_ = fresh_main(kSeedJoint, k);
      ContrastivePool pool;
      for (const auto& e : seen_train_) pool.clean.push_back(e.id);
      const ExampleIndex index = index_examples(seen_train_);
      for (int epoch = 0; epoch < config_.main_epochs; ++epoch) {
        const EpochStats s = train_pool_epoch(
            main_, pool, index, step(),
            derive_seed(config_.seed, kSeedPool,
                        static_cast<uint64_t>(k * 1000 + epoch)));
        record.losses.push_back({"joint", epoch, s.mean_loss, s.batches,
                                 s.degenerate_batches, s.skipped_anchors});
      }
    });
    phase("buffer", k, [&] {
      buffer_ = MemoryBuffer{config_.capacity, {}};
      std::vector<const Example*> all;
      for (const auto& e : seen_train_) all.push_back(&e);
      std::vector<int> seen_relations(seen_.begin(), seen_.end());
      seen_relations.insert(seen_relations.end(), relations.begin(),
                            relations.end());
      std::sort(seen_relations.begin(), seen_relations.end());
      seen_relations.erase(
          std::unique(seen_relations.begin(), seen_relations.end()),
          seen_relations.end());
      const BufferUpdate update = update_buffer(
          buffer_, all, seen_relations, main_,
          derive_seed(config_.seed, kSeedBuffer, static_cast<uint64_t>(k)));
      skipped_.insert(update.skipped.begin(), update.skipped.end());
      record.skipped_relations = update.skipped;
    });
    finish_memory(k, relations, record, audit);
  }

  std::vector<double> evaluate(int k) {
    std::vector<double> row;
    for (int j = 0; j <= k; ++j) {
      const auto& test = built_.test_sets[static_cast<size_t>(j)];
      size_t correct = 0;
      for (const Example& e : test) correct += predict(e) == e.gold_label;
      row.push_back(accuracy_of(correct, test.size()));
    }
    return row;
  }

  int predict(const Example& e) const {
    if (config_.method == Method::kFinetune) {
      const AuxOutput out = forward_aux(*classifier_, e.input);
      int best = -1;
      double best_logit = 0.0;
      for (size_t c = 0; c < built_.relations.size(); ++c) {
        const int rel = built_.relations[c];
        if (!seen_.contains(rel)) continue;
        if (best < 0 || out.logits[c] > best_logit) {
          best = rel;
          best_logit = out.logits[c];
        }
      }
      return best;
    }
    if (prototypes_.prototypes.empty()) return -1;
    if (prototypes_stale(prototypes_, main_))
      throw StateError("prototypes are stale");
    return ncm_predict(e, prototypes_, main_);
  }

  json dump_embeddings() const {
    std::vector<Vec> points;
    std::vector<int> labels;
    std::vector<int64_t> ids;
    for (const auto& test : built_.test_sets)
      for (const auto& e : test) {
        points.push_back(forward_main(main_, e.input).z);
        labels.push_back(e.gold_label);
        ids.push_back(e.id);
      }
    return project_2d(points, labels, ids);
  }

  const RunConfig& config_;
  const BuiltStream& built_;
  const RunOptions& options_;
  const ResolvedHyper hyper_;
  const EncoderConfig encoder_;

  ModelState main_;
  std::optional<ModelState> prev_aux_;
  std::optional<ModelState> classifier_;
  MemoryBuffer buffer_;
  PrototypeSet prototypes_;
  std::vector<Example> seen_train_;
  std::set<int> seen_;
  std::set<int> skipped_;
  std::set<int64_t> train_ids_;
  std::set<int64_t> test_ids_;
  std::vector<PhaseEvent> events_;
};

}  // namespace

const char* to_string(Method method) {
  for (const auto& [m, name] : method_names())
    if (m == method) return name;
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (const auto& [m, n] : method_names())
    if (name == n) return m;
  throw ConfigError("unknown method '" + name + "'");
}

const char* to_string(Profile profile) {
  return profile == Profile::kFewRel ? "fewrel" : "tacred";
}

Profile parse_profile(const std::string& name) {
  if (name == "fewrel") return Profile::kFewRel;
  if (name == "tacred") return Profile::kTacred;
  throw ConfigError("unknown profile '" + name + "'");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = {
      Method::kNacl, Method::kNoiseRetain, Method::kDiscard, Method::kFinetune,
      Method::kJoint};
  return methods;
}

PhaseError::PhaseError(std::string phase, int task, const std::string& message)
    : Error("[phase=" + phase + " task=" + std::to_string(task) + "] " +
            message),
      phase_(std::move(phase)),
      task_(task) {}

void RunConfig::validate() const {
  const auto& s = stream;
  if (s.source != "synthetic" && s.source != "jsonl")
    throw ConfigError("stream.source must be 'synthetic' or 'jsonl'");
  if (s.source == "jsonl" && s.path.empty())
    throw ConfigError("stream.path is required for the jsonl source");
  if (s.source == "synthetic") {
    if (s.n_relations < 2) throw ConfigError("stream.n_relations must be >= 2");
    if (s.train_per_relation < 2)
      throw ConfigError("stream.train_per_relation must be >= 2");
    if (s.test_per_relation < 1)
      throw ConfigError("stream.test_per_relation must be >= 1");
    if (s.input_dim < 1) throw ConfigError("stream.input_dim must be >= 1");
    if (!(s.separation > 0.0))
      throw ConfigError("stream.separation must be > 0");
  } else if (!(s.test_fraction > 0.0 && s.test_fraction < 1.0)) {
    throw ConfigError("stream.test_fraction must lie in (0, 1)");
  }
  if (s.n_tasks < 1) throw ConfigError("stream.n_tasks must be >= 1");
  if (!(s.noise_rate >= 0.0 && s.noise_rate <= 1.0))
    throw ConfigError("stream.noise_rate must lie in [0, 1]");
  if (s.protocol == NoiseProtocol::kGlobalOod && s.ood_relations < 1)
    throw ConfigError("stream.ood_relations must be >= 1");
  if (embed_dim < 1 || hidden_dim < 1 || out_dim < 1 || proj_dim < 1)
    throw ConfigError("model dimensions must be >= 1");
  if (gamma && !(*gamma >= 0.0 && *gamma < 1.0))
    throw ConfigError("selection.gamma must lie in [0, 1)");
  if (temperature && !(*temperature > 0.0))
    throw ConfigError("training.temperature must be > 0");
  if (lr && !(*lr > 0.0)) throw ConfigError("training.lr must be > 0");
  if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  if (main_epochs < 0 || aux_epochs < 0)
    throw ConfigError("epoch counts must be >= 0");
  if (!(attack.epsilon > 0.0)) throw ConfigError("attack.epsilon must be > 0");
  if (attack.steps < 0) throw ConfigError("attack.steps must be >= 0");
  if (attack.step_size && !(*attack.step_size > 0.0))
    throw ConfigError("attack.step_size must be > 0");
  if (capacity < 1) throw ConfigError("memory.capacity must be >= 1");
}

json config_to_json(const RunConfig& c) {
  const auto& s = c.stream;
  return {
      {"method", to_string(c.method)},
      {"profile", to_string(c.profile)},
      {"seed", c.seed},
      {"stream",
       {{"source", s.source},
        {"path", s.path.string()},
        {"n_relations", s.n_relations},
        {"train_per_relation", s.train_per_relation},
        {"test_per_relation", s.test_per_relation},
        {"input_dim", s.input_dim},
        {"separation", s.separation},
        {"test_fraction", s.test_fraction},
        {"n_tasks", s.n_tasks},
        {"noise_rate", s.noise_rate},
        {"protocol", to_string(s.protocol)},
        {"ood_relations", s.ood_relations}}},
      {"model",
       {{"embed_dim", c.embed_dim},
        {"hidden_dim", c.hidden_dim},
        {"out_dim", c.out_dim},
        {"proj_dim", c.proj_dim},
        {"proj_hidden_dim", c.proj_hidden_dim},
        {"normalize_projection", c.normalize_projection}}},
      {"selection",
       {{"gamma", optional_json(c.gamma)},
        {"aux_epochs", c.aux_epochs},
        {"confidence_rule", to_string(c.confidence_rule)},
        {"reboot", c.reboot}}},
      {"attack",
       {{"epsilon", c.attack.epsilon},
        {"steps", c.attack.steps},
        {"lambda", c.attack.lambda},
        {"step_size", optional_json(c.attack.step_size)}}},
      {"training",
       {{"lr", optional_json(c.lr)},
        {"temperature", optional_json(c.temperature)},
        {"batch_size", c.batch_size},
        {"main_epochs", c.main_epochs}}},
      {"memory",
       {{"capacity", c.capacity},
        {"literal_first_task_gate", c.literal_first_task_gate}}},
      {"output", {{"dump_embeddings", c.dump_embeddings}}},
  };
}

RunConfig config_from_json(const json& j) {
  check_keys(j, "<root>",
             {"method", "profile", "seed", "stream", "model", "selection",
              "attack", "training", "memory", "output"});
  RunConfig c;
  std::string name;
  if (j.contains("method")) {
    read_key(j, "method", name);
    c.method = parse_method(name);
  }
  if (j.contains("profile")) {
    read_key(j, "profile", name);
    c.profile = parse_profile(name);
  }
  read_key(j, "seed", c.seed);

  const json& s = section(j, "stream");
  check_keys(s, "stream",
             {"source", "path", "n_relations", "train_per_relation",
              "test_per_relation", "input_dim", "separation", "test_fraction",
              "n_tasks", "noise_rate", "protocol", "ood_relations"});
  read_key(s, "source", c.stream.source);
  std::string path = c.stream.path.string();
  read_key(s, "path", path);
  c.stream.path = path;
  read_key(s, "n_relations", c.stream.n_relations);
  read_key(s, "train_per_relation", c.stream.train_per_relation);
  read_key(s, "test_per_relation", c.stream.test_per_relation);
  read_key(s, "input_dim", c.stream.input_dim);
  read_key(s, "separation", c.stream.separation);
  read_key(s, "test_fraction", c.stream.test_fraction);
  read_key(s, "n_tasks", c.stream.n_tasks);
  read_key(s, "noise_rate", c.stream.noise_rate);
  if (s.contains("protocol")) {
    read_key(s, "protocol", name);
    try {
      c.stream.protocol = parse_noise_protocol(name);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  read_key(s, "ood_relations", c.stream.ood_relations);

  const json& m = section(j, "model");
  check_keys(m, "model",
             {"embed_dim", "hidden_dim", "out_dim", "proj_dim",
              "proj_hidden_dim", "normalize_projection"});
  read_key(m, "embed_dim", c.embed_dim);
  read_key(m, "hidden_dim", c.hidden_dim);
  read_key(m, "out_dim", c.out_dim);
  read_key(m, "proj_dim", c.proj_dim);
  read_key(m, "proj_hidden_dim", c.proj_hidden_dim);
  read_key(m, "normalize_projection", c.normalize_projection);

  const json& sel = section(j, "selection");
  check_keys(sel, "selection",
             {"gamma", "aux_epochs", "confidence_rule", "reboot"});
  read_optional(sel, "gamma", c.gamma);
  read_key(sel, "aux_epochs", c.aux_epochs);
  if (sel.contains("confidence_rule")) {
    read_key(sel, "confidence_rule", name);
    c.confidence_rule = parse_confidence_rule(name);
  }
  read_key(sel, "reboot", c.reboot);

  const json& a = section(j, "attack");
  check_keys(a, "attack", {"epsilon", "steps", "lambda", "step_size"});
  read_key(a, "epsilon", c.attack.epsilon);
  read_key(a, "steps", c.attack.steps);
  read_key(a, "lambda", c.attack.lambda);
  read_optional(a, "step_size", c.attack.step_size);

  const json& t = section(j, "training");
  check_keys(t, "training", {"lr", "temperature", "batch_size", "main_epochs"});
  read_optional(t, "lr", c.lr);
  read_optional(t, "temperature", c.temperature);
  read_key(t, "batch_size", c.batch_size);
  read_key(t, "main_epochs", c.main_epochs);

  const json& mem = section(j, "memory");
  check_keys(mem, "memory", {"capacity", "literal_first_task_gate"});
  read_key(mem, "capacity", c.capacity);
  read_key(mem, "literal_first_task_gate", c.literal_first_task_gate);

  const json& o = section(j, "output");
  check_keys(o, "output", {"dump_embeddings"});
  read_key(o, "dump_embeddings", c.dump_embeddings);

  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << config_to_json(config).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

double default_gamma(Profile profile, double noise_rate) {
  if (noise_rate == 0.0) return 0.0;
  static constexpr double kFewRel[] = {0.8, 0.6, 0.5};
  static constexpr double kTacred[] = {0.9, 0.75, 0.6};
  const size_t i = nearest_rate(noise_rate);
  return profile == Profile::kFewRel ? kFewRel[i] : kTacred[i];
}

double default_temperature(double noise_rate) {
  static constexpr double kTau[] = {0.1, 0.05, 0.2};
  return kTau[nearest_rate(noise_rate)];
}

double default_lr(Profile profile, InputKind kind) {
  if (kind == InputKind::kVector) return 1e-3;
  return profile == Profile::kFewRel ? 1e-5 : 2e-5;
}

ResolvedHyper resolve(const RunConfig& config, InputKind kind) {
  ResolvedHyper h;
  const double rate = config.stream.noise_rate;
  h.gamma = config.gamma.value_or(default_gamma(config.profile, rate));
  h.temperature = config.temperature.value_or(default_temperature(rate));
  h.lr = config.lr.value_or(default_lr(config.profile, kind));
  return h;
}

BuiltStream build_stream(const RunConfig& config) {
  config.validate();
  const StreamConfig& s = config.stream;
  Dataset train;
  Dataset test;
  if (s.source == "synthetic") {
    const Dataset all = generate_synthetic(
        s.n_relations, s.train_per_relation + s.test_per_relation, s.input_dim,
        s.separation, derive_seed(config.seed, kSeedData));
    std::tie(train, test) = split_per_relation(
        all, s.test_per_relation, derive_seed(config.seed, kSeedSplit));
  } else {
    const Dataset all = ingest_jsonl(s.path);
    std::tie(train, test) = split_per_relation_fraction(
        all, s.test_fraction, derive_seed(config.seed, kSeedSplit));
  }

  NoiseSpec spec{s.noise_rate, s.protocol, derive_seed(config.seed, kSeedNoise)};
  std::optional<Dataset> pool;
  if (s.protocol == NoiseProtocol::kGlobalOod) {
    if (train.kind != InputKind::kVector)
      throw ConfigError("global-ood noise requires the synthetic source");
    const int64_t need = corruption_count(s.noise_rate, train.size());
    const int per = std::max<int>(
        2, static_cast<int>((need + s.ood_relations - 1) / s.ood_relations));
    pool = generate_synthetic(
        s.ood_relations, per, train.input_dim, s.separation,
        derive_seed(config.seed, kSeedOod),
        static_cast<int>(train.relation_names.size()), kOodIdOffset);
  }
  const Dataset noisy = inject_noise(train, spec, pool ? &*pool : nullptr);

  BuiltStream built;
  built.stream = partition_tasks(noisy, s.n_tasks,
                                 derive_seed(config.seed, kSeedPartition));
  built.stream.protocol = s.protocol;
  built.stream.noise_seed = spec.seed;
  if (pool) built.stream.ood_pool = pool->examples;
  built.kind = train.kind;
  built.input_dim = train.input_dim;
  built.vocab_size = static_cast<int>(train.token_vocab.size());
  for (const auto& [rel, task] : built.stream.relation_to_task)
    built.relations.push_back(rel);
  built.test_sets.resize(static_cast<size_t>(s.n_tasks));
  for (const auto& e : test.examples) {
    const auto it = built.stream.relation_to_task.find(e.gold_label);
    if (it == built.stream.relation_to_task.end()) continue;
    built.test_sets[static_cast<size_t>(it->second)].push_back(e);
  }
  return built;
}

RunResult run_stream(const RunConfig& config, const RunOptions& options) {
  const BuiltStream built = build_stream(config);
  return run_stream(config, built, options);
}

RunResult run_stream(const RunConfig& config, const BuiltStream& built,
                     const RunOptions& options) {
  config.validate();
  Runner runner(config, built, options);
  return runner.run();
}

double last_accuracy(const std::vector<std::vector<double>>& accuracy,
                     const std::vector<size_t>& test_sizes) {
  if (accuracy.empty() || accuracy.back().size() != accuracy.size() ||
      test_sizes.size() != accuracy.size())
    throw StateError("accuracy matrix is incomplete");
  const auto& last = accuracy.back();
  double correct = 0.0;
  size_t total = 0;
  for (size_t j = 0; j < last.size(); ++j) {
    correct += last[j] * static_cast<double>(test_sizes[j]);
    total += test_sizes[j];
  }
  return total == 0 ? 0.0 : correct / static_cast<double>(total);
}

double last_accuracy(const RunReport& report) {
  return last_accuracy(report.accuracy, report.test_sizes);
}

std::optional<double> normalized_forgetting(
    const std::vector<std::vector<double>>& accuracy) {
  if (accuracy.empty() || accuracy.front().empty() || accuracy.back().empty())
    throw StateError("accuracy matrix is incomplete");
  const double first = accuracy.front()[0];
  if (first == 0.0) return std::nullopt;
  return std::abs(accuracy.back()[0] - first) / first;
}

std::optional<double> buffer_purity(const MemoryBuffer& buffer) {
  size_t total = 0;
  size_t clean = 0;
  for (const auto& [rel, exemplars] : buffer.store)
    for (const auto& e : exemplars) {
      ++total;
      clean += e.observed_label == e.gold_label ? 1 : 0;
    }
  if (total == 0) return std::nullopt;
  return static_cast<double>(clean) / static_cast<double>(total);
}

json buffer_manifest(const MemoryBuffer& buffer) {
  json relations = json::array();
  for (const auto& [rel, exemplars] : buffer.store) {
    json ids = json::array();
    json flags = json::array();
    for (const auto& e : exemplars) {
      ids.push_back(e.id);
      flags.push_back(e.observed_label == e.gold_label);
    }
    relations.push_back(
        {{"relation", rel}, {"exemplars", ids}, {"clean", flags}});
  }
  return {{"capacity", buffer.capacity},
          {"purity", optional_json(buffer_purity(buffer))},
          {"relations", std::move(relations)}};
}

RebootDiagnostic reboot_diagnostic(const RunConfig& config,
                                   const BuiltStream& built) {
  const ResolvedHyper hyper = resolve(config, built.kind);
  const EncoderConfig encoder = encoder_config(config, built);
  SelectionConfig sel;
  sel.gamma = hyper.gamma;
  sel.aux_epochs = config.aux_epochs;
  sel.batch_size = config.batch_size;
  sel.lr = hyper.lr;

  RebootDiagnostic out;
  for (bool reboot : {true, false}) {
    std::optional<ModelState> prev;
    std::optional<double> separation;
    for (int k = 0; k < built.stream.n_tasks; ++k) {
      const auto& data = built.stream.tasks[static_cast<size_t>(k)];
      const auto& relations = built.stream.task_relations[static_cast<size_t>(k)];
      ModelState aux = train_auxiliary(
          data, relations, encoder, sel,
          derive_seed(config.seed, kSeedAux, static_cast<uint64_t>(k)),
          reboot || !prev ? nullptr : &*prev);
      separation = confidence_separation(
          select_clean(aux, data, relations, hyper.gamma,
                       config.confidence_rule),
          data);
      prev = std::move(aux);
    }
    (reboot ? out.rebooted : out.warm_started) = separation;
  }
  return out;
}

std::vector<double> accuracy_curve(const RunReport& report) {
  std::vector<double> curve;
  for (size_t k = 0; k < report.accuracy.size(); ++k) {
    double correct = 0.0;
    size_t total = 0;
    for (size_t j = 0; j <= k && j < report.accuracy[k].size(); ++j) {
      correct += report.accuracy[k][j] * static_cast<double>(report.test_sizes[j]);
      total += report.test_sizes[j];
    }
    curve.push_back(total == 0 ? 0.0 : correct / static_cast<double>(total));
  }
  return curve;
}

}  // namespace noisycre
