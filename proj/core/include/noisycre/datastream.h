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

// Contaminated continual task streams: synthetic Gaussian relations or
// JSONL-ingested token sequences, label corruption, and relation-balanced
// task partitioning.

#ifndef NOISYCRE_DATASTREAM_H_
#define NOISYCRE_DATASTREAM_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "noisycre/common.h"

namespace noisycre {

enum class InputKind { kVector, kTokens };

// Inclusive token span [first, last].
using Span = std::array<int, 2>;

struct InputRep {
  InputKind kind = InputKind::kVector;
  Vec vector;                  // kVector
  std::vector<int32_t> tokens;  // kTokens
  Span head{0, 0};             // kTokens
  Span tail{0, 0};             // kTokens

  bool operator==(const InputRep&) const = default;
};

struct Example {
  int64_t id = 0;
  InputRep input;
  int gold_label = 0;
  int observed_label = 0;
  bool is_corrupted = false;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  InputKind kind = InputKind::kVector;
  int input_dim = 0;  // vector length (kVector)
  std::vector<Example> examples;
  std::vector<std::string> relation_names;  // index == relation id
  std::vector<std::string> token_vocab;     // index == token id (kTokens)

  size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

enum class NoiseProtocol { kUniformFlip, kGlobalOod };

struct NoiseSpec {
  double rate = 0.0;
  NoiseProtocol protocol = NoiseProtocol::kUniformFlip;
  uint64_t seed = 0;
};

struct TaskStream {
  std::vector<std::vector<Example>> tasks;
  // Sorted relation ids owned by each task.
  std::vector<std::vector<int>> task_relations;
  std::map<int, int> relation_to_task;
  int n_tasks = 0;
  double noise_rate = 0.0;
  NoiseProtocol protocol = NoiseProtocol::kUniformFlip;
  uint64_t noise_seed = 0;
  uint64_t partition_seed = 0;
  std::optional<std::vector<Example>> ood_pool;

  size_t total_examples() const;
  // Task-local class index of a relation owned by `task`; throws
  // InvariantError when the relation belongs elsewhere.
  int local_class(int task, int relation) const;
};

enum class NoiseType { kClean, kClosedSet, kOpenSet };

const char* to_string(NoiseType type);
const char* to_string(NoiseProtocol protocol);
NoiseProtocol parse_noise_protocol(const std::string& name);

// Isotropic unit-variance Gaussian clusters, one per relation, with means at
// pairwise distance >= separation. Relation ids are label_offset + r and
// example ids start at id_offset.
Dataset generate_synthetic(int n_relations, int per_relation, int input_dim,
                           double separation, uint64_t seed,
                           int label_offset = 0, int64_t id_offset = 0);

// One JSON record per line:
//   {"tokens": [...], "head": [s, e], "tail": [s, e], "relation": "name"}
// Spans are inclusive token indices. Relation and token ids are assigned in
// first-seen order.
Dataset ingest_jsonl(const std::filesystem::path& path);

// Splits each relation's examples into (train, test), taking
// `test_per_relation` examples per relation for the test side after a
// seeded shuffle. Test sets are taken before any corruption.
std::pair<Dataset, Dataset> split_per_relation(const Dataset& data,
                                               int test_per_relation,
                                               uint64_t seed);
// Fractional variant used for ingested corpora.
std::pair<Dataset, Dataset> split_per_relation_fraction(const Dataset& data,
                                                        double test_fraction,
                                                        uint64_t seed);

// Number of corrupted examples for a given rate: round-half-away(rate * n).
int64_t corruption_count(double rate, size_t n);

Dataset inject_noise(const Dataset& data, const NoiseSpec& spec,
                     const Dataset* ood_pool = nullptr);

TaskStream partition_tasks(const Dataset& data, int n_tasks, uint64_t seed);

NoiseType noise_type(const Example& example, int task_index,
                     const TaskStream& stream);

// Audit manifest: seeds, relation assignment, and per-example flags.
nlohmann::json stream_manifest(const TaskStream& stream);
void write_manifest(const TaskStream& stream,
                    const std::filesystem::path& path);

}  // namespace noisycre

#endif  // NOISYCRE_DATASTREAM_H_
