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

#include "noisycre/datastream.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <unordered_map>

namespace noisycre {

namespace {

using json = nlohmann::json;

std::vector<int> distinct_labels(const std::vector<Example>& examples,
                                 bool observed) {
  std::set<int> labels;
  for (const auto& e : examples)
    labels.insert(observed ? e.observed_label : e.gold_label);
  return {labels.begin(), labels.end()};
}

NoiseType classify(const Example& example, int task_index,
                   const TaskStream& stream) {
  if (!example.is_corrupted) return NoiseType::kClean;
  const auto it = stream.relation_to_task.find(example.gold_label);
  if (it != stream.relation_to_task.end() && it->second <= task_index)
    return NoiseType::kClosedSet;
  return NoiseType::kOpenSet;
}

Span parse_span(const json& record, const char* field, size_t line_no) {
  const auto it = record.find(field);
  if (it == record.end())
    throw ParseError("line " + std::to_string(line_no) + ": missing \"" +
                     field + "\" field");
  if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number_integer() ||
      !(*it)[1].is_number_integer())
    throw ParseError("line " + std::to_string(line_no) + ": \"" + field +
                     "\" must be a [start, end] integer pair");
  return {(*it)[0].get<int>(), (*it)[1].get<int>()};
}

}  // namespace

size_t TaskStream::total_examples() const {
  size_t n = 0;
  for (const auto& t : tasks) n += t.size();
  return n;
}

int TaskStream::local_class(int task, int relation) const {
  const auto& rels = task_relations.at(static_cast<size_t>(task));
  const auto it = std::lower_bound(rels.begin(), rels.end(), relation);
  if (it == rels.end() || *it != relation)
    throw InvariantError("relation " + std::to_string(relation) +
                         " is not owned by task " + std::to_string(task));
  return static_cast<int>(it - rels.begin());
}

const char* to_string(NoiseType type) {
  switch (type) {
    case NoiseType::kClean: return "clean";
    case NoiseType::kClosedSet: return "closed-set";
    case NoiseType::kOpenSet: return "open-set";
  }
  return "unknown";
}

const char* to_string(NoiseProtocol protocol) {
  return protocol == NoiseProtocol::kUniformFlip ? "uniform-flip"
                                                 : "global-ood";
}

NoiseProtocol parse_noise_protocol(const std::string& name) {
  if (name == "uniform-flip") return NoiseProtocol::kUniformFlip;
  if (name == "global-ood") return NoiseProtocol::kGlobalOod;
  throw ConfigError("unknown noise protocol '" + name + "'");
}

Dataset generate_synthetic(int n_relations, int per_relation, int input_dim,
                           double separation, uint64_t seed, int label_offset,
                           int64_t id_offset) {
  if (n_relations < 2 || per_relation < 2 || input_dim < 1)
    throw ConfigError("generate_synthetic: need n_relations >= 2, "
                      "per_relation >= 2 and input_dim >= 1");
  if (!(separation > 0.0))
    throw ConfigError("generate_synthetic: separation must be > 0");

  Rng rng(derive_seed(seed, 0x5E11));
  std::normal_distribution<double> normal(0.0, 1.0);

  // Means are drawn from N(0, s^2 I) with s chosen so the expected pairwise
  // distance is 1.25 * separation, then rejected until every pair clears
  // `separation`. The scale grows if rejection keeps failing (low dims).
  double scale = 1.25 * separation / std::sqrt(2.0 * input_dim);
  std::vector<Vec> means;
  means.reserve(static_cast<size_t>(n_relations));
  int failures = 0;
  while (static_cast<int>(means.size()) < n_relations) {
    Vec mu(static_cast<size_t>(input_dim));
    for (auto& v : mu) v = scale * normal(rng);
    const bool ok = std::all_of(means.begin(), means.end(), [&](const Vec& m) {
      return squared_distance(m, mu) >= separation * separation;
    });
    if (ok) {
      means.push_back(std::move(mu));
      failures = 0;
    } else if (++failures >= 1000) {
      scale *= 1.1;
      failures = 0;
    }
  }

  Dataset out;
  out.kind = InputKind::kVector;
  out.input_dim = input_dim;
  out.relation_names.resize(static_cast<size_t>(label_offset + n_relations));
  for (int r = 0; r < label_offset + n_relations; ++r)
    out.relation_names[static_cast<size_t>(r)] = "R" + std::to_string(r);
  out.examples.reserve(static_cast<size_t>(n_relations) *
                       static_cast<size_t>(per_relation));
  int64_t next_id = id_offset;
  for (int r = 0; r < n_relations; ++r) {
    for (int i = 0; i < per_relation; ++i) {
      Example e;
      e.id = next_id++;
      e.input.kind = InputKind::kVector;
      e.input.vector.resize(static_cast<size_t>(input_dim));
      for (int d = 0; d < input_dim; ++d)
        e.input.vector[static_cast<size_t>(d)] =
            means[static_cast<size_t>(r)][static_cast<size_t>(d)] +
            normal(rng);
      e.gold_label = e.observed_label = label_offset + r;
      out.examples.push_back(std::move(e));
    }
  }
  return out;
}

Dataset ingest_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  Dataset out;
  out.kind = InputKind::kTokens;
  std::unordered_map<std::string, int> relation_ids;
  std::unordered_map<std::string, int32_t> token_ids;

  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!record.is_object())
      throw ParseError("line " + std::to_string(line_no) +
                       ": record must be a JSON object");
    const auto tokens_it = record.find("tokens");
    if (tokens_it == record.end() || !tokens_it->is_array())
      throw ParseError("line " + std::to_string(line_no) +
                       ": missing \"tokens\" array");
    const auto rel_it = record.find("relation");
    if (rel_it == record.end() || !rel_it->is_string())
      throw ParseError("line " + std::to_string(line_no) +
                       ": missing \"relation\" field");
    const Span head = parse_span(record, "head", line_no);
    const Span tail = parse_span(record, "tail", line_no);

    Example e;
    e.id = static_cast<int64_t>(out.examples.size());
    e.input.kind = InputKind::kTokens;
    for (const auto& tok : *tokens_it) {
      if (!tok.is_string())
        throw ParseError("line " + std::to_string(line_no) +
                         ": tokens must be strings");
      const auto& text = tok.get_ref<const std::string&>();
      auto [it, inserted] =
          token_ids.try_emplace(text, static_cast<int32_t>(token_ids.size()));
      if (inserted) out.token_vocab.push_back(text);
      e.input.tokens.push_back(it->second);
    }
    const int n = static_cast<int>(e.input.tokens.size());
    for (const Span& s : {head, tail}) {
      if (s[0] < 0 || s[1] < s[0] || s[1] >= n)
        throw ValidationError("line " + std::to_string(line_no) + ": span [" +
                              std::to_string(s[0]) + ", " +
                              std::to_string(s[1]) + "] out of range for " +
                              std::to_string(n) + " tokens");
    }
    e.input.head = head;
    e.input.tail = tail;

    const auto& rel = rel_it->get_ref<const std::string&>();
    auto [rit, rel_inserted] =
        relation_ids.try_emplace(rel, static_cast<int>(relation_ids.size()));
    if (rel_inserted) out.relation_names.push_back(rel);
    e.gold_label = e.observed_label = rit->second;
    out.examples.push_back(std::move(e));
  }
  return out;
}

namespace {

std::pair<Dataset, Dataset> split_impl(
    const Dataset& data, uint64_t seed,
    const std::function<size_t(size_t)>& test_count) {
  std::map<int, std::vector<size_t>> by_relation;
  for (size_t i = 0; i < data.examples.size(); ++i)
    by_relation[data.examples[i].gold_label].push_back(i);

  Rng rng(derive_seed(seed, 0x5B117));
  std::vector<bool> is_test(data.examples.size(), false);
  for (auto& [rel, idx] : by_relation) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const size_t n_test = test_count(idx.size());
    if (n_test >= idx.size())
      throw ConfigError("relation " + std::to_string(rel) + " has " +
                        std::to_string(idx.size()) +
                        " examples; cannot hold out " +
                        std::to_string(n_test) + " for testing");
    for (size_t k = 0; k < n_test; ++k) is_test[idx[k]] = true;
  }

  Dataset train = data, test = data;
  train.examples.clear();
  test.examples.clear();
  for (size_t i = 0; i < data.examples.size(); ++i)
    (is_test[i] ? test : train).examples.push_back(data.examples[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace

std::pair<Dataset, Dataset> split_per_relation(const Dataset& data,
                                               int test_per_relation,
                                               uint64_t seed) {
  if (test_per_relation < 0)
    throw ConfigError("test_per_relation must be >= 0");
  return split_impl(data, seed, [&](size_t) {
    return static_cast<size_t>(test_per_relation);
  });
}

std::pair<Dataset, Dataset> split_per_relation_fraction(const Dataset& data,
                                                        double test_fraction,
                                                        uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must be in [0, 1)");
  return split_impl(data, seed, [&](size_t n) {
    const auto k = static_cast<size_t>(std::llround(test_fraction * n));
    return std::min(k, n > 0 ? n - 1 : 0);
  });
}

int64_t corruption_count(double rate, size_t n) {
  return static_cast<int64_t>(std::llround(rate * static_cast<double>(n)));
}

Dataset inject_noise(const Dataset& data, const NoiseSpec& spec,
                     const Dataset* ood_pool) {
  if (!(spec.rate >= 0.0 && spec.rate <= 1.0))
    throw ConfigError("noise rate must lie in [0, 1]");
  if (data.empty()) throw ConfigError("inject_noise: empty dataset");

  Dataset out = data;
  const int64_t k = corruption_count(spec.rate, data.size());
  if (k == 0) return out;

  Rng rng(derive_seed(spec.seed, 0x401CE));
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<size_t>(k));

  if (spec.protocol == NoiseProtocol::kUniformFlip) {
    const std::vector<int> labels = distinct_labels(data.examples, false);
    if (labels.size() < 2)
      throw ConfigError("uniform-flip needs at least two relations");
    std::uniform_int_distribution<size_t> pick(0, labels.size() - 2);
    for (size_t i : order) {
      Example& e = out.examples[i];
      const size_t gold_pos = static_cast<size_t>(
          std::lower_bound(labels.begin(), labels.end(), e.gold_label) -
          labels.begin());
      size_t p = pick(rng);
      if (p >= gold_pos) ++p;
      e.observed_label = labels[p];
      e.is_corrupted = true;
    }
    return out;
  }

  if (ood_pool == nullptr)
    throw ConfigError("global-ood noise requires an OOD pool");
  if (ood_pool->size() < static_cast<size_t>(k))
    throw CapacityError("OOD pool holds " + std::to_string(ood_pool->size()) +
                        " examples but " + std::to_string(k) +
                        " are needed");
  if (ood_pool->kind != data.kind)
    throw ValidationError("OOD pool input kind differs from dataset");
  const std::vector<int> in_labels = distinct_labels(data.examples, false);
  for (const auto& e : ood_pool->examples) {
    if (std::binary_search(in_labels.begin(), in_labels.end(), e.gold_label))
      throw ValidationError("OOD pool label " + std::to_string(e.gold_label) +
                            " overlaps the in-distribution label space");
  }
  std::vector<size_t> pool_order(ood_pool->size());
  std::iota(pool_order.begin(), pool_order.end(), size_t{0});
  std::shuffle(pool_order.begin(), pool_order.end(), rng);
  for (size_t j = 0; j < order.size(); ++j) {
    Example& e = out.examples[order[j]];
    const Example& foreign = ood_pool->examples[pool_order[j]];
    e.input = foreign.input;
    e.gold_label = foreign.gold_label;
    e.is_corrupted = true;
  }
  if (out.relation_names.size() < ood_pool->relation_names.size())
    out.relation_names = ood_pool->relation_names;
  return out;
}

TaskStream partition_tasks(const Dataset& data, int n_tasks, uint64_t seed) {
  std::vector<int> relations = distinct_labels(data.examples, true);
  if (n_tasks < 1) throw ConfigError("n_tasks must be >= 1");
  if (static_cast<size_t>(n_tasks) > relations.size())
    throw ConfigError("n_tasks (" + std::to_string(n_tasks) +
                      ") exceeds relation count (" +
                      std::to_string(relations.size()) + ")");

  Rng rng(derive_seed(seed, 0x7A5C));
  std::shuffle(relations.begin(), relations.end(), rng);

  TaskStream stream;
  stream.n_tasks = n_tasks;
  stream.partition_seed = seed;
  stream.tasks.resize(static_cast<size_t>(n_tasks));
  stream.task_relations.resize(static_cast<size_t>(n_tasks));
  const size_t base = relations.size() / static_cast<size_t>(n_tasks);
  const size_t extra = relations.size() % static_cast<size_t>(n_tasks);
  size_t next = 0;
  for (size_t t = 0; t < static_cast<size_t>(n_tasks); ++t) {
    const size_t count = base + (t < extra ? 1 : 0);
    for (size_t c = 0; c < count; ++c) {
      const int rel = relations[next++];
      stream.task_relations[t].push_back(rel);
      stream.relation_to_task[rel] = static_cast<int>(t);
    }
    std::sort(stream.task_relations[t].begin(), stream.task_relations[t].end());
  }
  for (const auto& e : data.examples)
    stream.tasks[static_cast<size_t>(stream.relation_to_task.at(
                     e.observed_label))]
        .push_back(e);

  size_t corrupted = 0;
  for (const auto& e : data.examples) corrupted += e.is_corrupted ? 1 : 0;
  stream.noise_rate =
      data.empty() ? 0.0 : static_cast<double>(corrupted) / data.size();
  return stream;
}

NoiseType noise_type(const Example& example, int task_index,
                     const TaskStream& stream) {
  if (task_index < 0 || task_index >= stream.n_tasks)
    throw LookupError("task index " + std::to_string(task_index) +
                      " out of range");
  const auto& task = stream.tasks[static_cast<size_t>(task_index)];
  const bool present =
      std::any_of(task.begin(), task.end(),
                  [&](const Example& e) { return e.id == example.id; });
  if (!present)
    throw LookupError("example " + std::to_string(example.id) +
                      " is not in task " + std::to_string(task_index));
  return classify(example, task_index, stream);
}

nlohmann::json stream_manifest(const TaskStream& stream) {
  json j;
  j["version"] = 1;
  j["n_tasks"] = stream.n_tasks;
  j["noise_rate"] = stream.noise_rate;
  j["protocol"] = to_string(stream.protocol);
  j["noise_seed"] = stream.noise_seed;
  j["partition_seed"] = stream.partition_seed;
  json assignment = json::object();
  for (const auto& [rel, task] : stream.relation_to_task)
    assignment[std::to_string(rel)] = task;
  j["relation_to_task"] = std::move(assignment);
  json tasks = json::array();
  for (int t = 0; t < stream.n_tasks; ++t) {
    json examples = json::array();
    for (const auto& e : stream.tasks[static_cast<size_t>(t)]) {
      examples.push_back({{"id", e.id},
                          {"gold", e.gold_label},
                          {"observed", e.observed_label},
                          {"corrupted", e.is_corrupted},
                          {"noise_type", to_string(classify(e, t, stream))}});
    }
    tasks.push_back({{"task", t},
                     {"relations", stream.task_relations[static_cast<size_t>(t)]},
                     {"examples", std::move(examples)}});
  }
  j["tasks"] = std::move(tasks);
  return j;
}

void write_manifest(const TaskStream& stream,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << stream_manifest(stream).dump(1) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace noisycre
