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

// Run orchestration: configuration, stream construction, the per-task
// pipeline (selection, attack, pool training, buffer update, replay,
// prototypes), the baselines, evaluation metrics, and report emission.

#ifndef NOISYCRE_HARNESS_H_
#define NOISYCRE_HARNESS_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "noisycre/attack.h"
#include "noisycre/contrastive.h"
#include "noisycre/datastream.h"
#include "noisycre/denoise.h"
#include "noisycre/memory.h"
#include "noisycre/models.h"

namespace noisycre {

enum class Method { kNacl, kDiscard, kNoiseRetain, kFinetune, kJoint };
enum class Profile { kFewRel, kTacred };

const char* to_string(Method method);
Method parse_method(const std::string& name);
const char* to_string(Profile profile);
Profile parse_profile(const std::string& name);
const std::vector<Method>& all_methods();

// Failure inside one phase of one task. what() reads
// "[phase=<phase> task=<k>] <message>".
class PhaseError : public Error {
 public:
  PhaseError(std::string phase, int task, const std::string& message);
  const std::string& phase() const { return phase_; }
  int task() const { return task_; }

 private:
  std::string phase_;
  int task_;
};

struct StreamConfig {
  std::string source = "synthetic";  // "synthetic" or "jsonl"
  std::filesystem::path path;        // jsonl source
  int n_relations = 20;
  int train_per_relation = 200;
  int test_per_relation = 50;
  int input_dim = 16;
  double separation = 6.0;
  double test_fraction = 0.2;  // jsonl source
  int n_tasks = 5;
  double noise_rate = 0.3;
  NoiseProtocol protocol = NoiseProtocol::kUniformFlip;
  // Relations in the synthetic out-of-distribution pool (global-ood only).
  int ood_relations = 20;
};

struct RunConfig {
  StreamConfig stream;
  Method method = Method::kNacl;
  Profile profile = Profile::kFewRel;

  int embed_dim = 16;  // tokens only; vector inputs use stream.input_dim
  int hidden_dim = 64;
  int out_dim = 32;
  int proj_dim = 64;
  int proj_hidden_dim = 0;  // <= 0: hidden_dim
  bool normalize_projection = true;

  // Unset values resolve from the noise rate, profile, and input kind.
  std::optional<double> gamma;
  std::optional<double> temperature;
  std::optional<double> lr;

  int batch_size = 16;
  int main_epochs = 1;  // E_1
  int aux_epochs = 3;   // E_2
  AttackConfig attack;
  int capacity = 20;
  ConfidenceRule confidence_rule = ConfidenceRule::kObservedLabel;
  bool reboot = true;
  bool literal_first_task_gate = false;
  bool dump_embeddings = false;
  uint64_t seed = 0;

  void validate() const;
};

nlohmann::json config_to_json(const RunConfig& config);
// Missing keys keep their defaults; unknown keys raise ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);

// Table defaults keyed by the nearest listed noise rate (10/30/50%). A zero
// noise rate selects everything.
double default_gamma(Profile profile, double noise_rate);
double default_temperature(double noise_rate);
double default_lr(Profile profile, InputKind kind);

struct ResolvedHyper {
  double gamma = 0.0;
  double temperature = 0.1;
  double lr = 1e-3;
};
ResolvedHyper resolve(const RunConfig& config, InputKind kind);

struct BuiltStream {
  TaskStream stream;
  // Clean test examples of each task's relations.
  std::vector<std::vector<Example>> test_sets;
  InputKind kind = InputKind::kVector;
  int input_dim = 0;
  int vocab_size = 0;
  std::vector<int> relations;  // every relation id, ascending
};

BuiltStream build_stream(const RunConfig& config);

struct EpochLoss {
  std::string phase;  // "nacl", "replay", "ce", "joint"
  int epoch = 0;
  double mean_loss = 0.0;
  size_t batches = 0;
  size_t degenerate_batches = 0;
  size_t skipped_anchors = 0;

  bool operator==(const EpochLoss&) const = default;
};

struct TaskRecord {
  int task = 0;
  size_t n_train = 0;
  double gamma = 0.0;
  size_t n_clean = 0;
  size_t n_noisy = 0;
  size_t selected_truly_clean = 0;
  size_t truly_clean = 0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> confidence_separation;
  std::optional<double> asr;
  size_t att_pos = 0;
  size_t neg = 0;
  std::optional<double> target_prob_before;
  std::optional<double> target_prob_after;
  std::optional<double> max_abs_delta;
  size_t buffer_size = 0;
  std::optional<double> buffer_purity;
  std::vector<int> skipped_relations;
  std::vector<EpochLoss> losses;

  bool operator==(const TaskRecord&) const = default;
};

struct PhaseEvent {
  uint64_t seq = 0;
  int task = 0;
  std::string phase;
  bool operator==(const PhaseEvent&) const = default;
};

struct RunReport {
  std::string method;
  uint64_t seed = 0;
  nlohmann::json config;
  // accuracy[k][j]: accuracy on task j's test set after task k, j <= k.
  std::vector<std::vector<double>> accuracy;
  std::vector<size_t> test_sizes;
  std::optional<double> last_accuracy;
  std::optional<double> normalized_forgetting;
  std::vector<TaskRecord> tasks;
  std::vector<PhaseEvent> events;

  bool operator==(const RunReport&) const = default;
};

struct RunResult {
  RunReport report;
  // Per-task selection audit and buffer manifest.
  std::vector<nlohmann::json> audits;
  // 2-D projection of final test features (when dump_embeddings is set).
  nlohmann::json embedding_dump;
  std::vector<double> task_seconds;
};

struct RunOptions {
  // Where the main model is checkpointed when a phase fails (empty: never).
  std::filesystem::path failure_checkpoint;
};

RunResult run_stream(const RunConfig& config, const RunOptions& options = {});
RunResult run_stream(const RunConfig& config, const BuiltStream& built,
                     const RunOptions& options = {});

// Weighted accuracy over the union of all test sets after the final task.
// Throws StateError if the accuracy matrix is incomplete.
double last_accuracy(const RunReport& report);
double last_accuracy(const std::vector<std::vector<double>>& accuracy,
                     const std::vector<size_t>& test_sizes);

// |A[n][1] - A[1][1]| / A[1][1]; undefined when A[1][1] == 0.
std::optional<double> normalized_forgetting(
    const std::vector<std::vector<double>>& accuracy);

// Share of exemplars whose observed label equals the gold label; undefined
// for an empty buffer.
std::optional<double> buffer_purity(const MemoryBuffer& buffer);

nlohmann::json buffer_manifest(const MemoryBuffer& buffer);

// Confidence separation at the final task with the auxiliary model either
// rebooted each task or warm-started from the previous task's model.
struct RebootDiagnostic {
  std::optional<double> rebooted;
  std::optional<double> warm_started;
};
RebootDiagnostic reboot_diagnostic(const RunConfig& config,
                                   const BuiltStream& built);

// Report files.
nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);
RunReport read_report(const std::filesystem::path& metrics_file);

struct EmitOptions {
  bool plots = true;
};

// Writes metrics.json, timing.json, summary.txt, audit_task_<k>.json and,
// with plots enabled, accuracy.svg, confidence.svg, loss.svg and asr.svg.
void emit_report(const RunResult& result, const std::filesystem::path& dir,
                 const EmitOptions& options = {});

// Comparison table and accuracy curves across several stored runs.
struct SweepRow {
  std::string method;
  std::vector<double> last_accuracy;
  std::vector<std::optional<double>> forgetting;
  std::vector<std::optional<double>> purity;
  std::vector<std::vector<double>> curves;  // per seed, A[k] weighted
};
std::string sweep_table(const std::vector<SweepRow>& rows);
void emit_sweep(const std::vector<SweepRow>& rows,
                const std::filesystem::path& dir, bool plots = true);

// Weighted accuracy over tasks 0..k after task k.
std::vector<double> accuracy_curve(const RunReport& report);

}  // namespace noisycre

#endif  // NOISYCRE_HARNESS_H_
