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

// Desk-scale encoders and heads.
//
//   main       z = normalize(Proj(E_M(x)))   Proj = Linear -> ReLU -> Linear
//   auxiliary  logits = F_A(E_A(x))           F_A  = Linear
//   E(x)       Linear -> ReLU -> Linear applied to the mean-pooled rows of
//              the embedded input.
//
// Vector inputs embed to a 1 x dim matrix (identity). Token inputs embed to an
// L x embed_dim matrix: token embedding plus a head/tail marker embedding for
// tokens inside the entity spans. The embedded matrix is the attack surface.

#ifndef NOISYCRE_MODELS_H_
#define NOISYCRE_MODELS_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "noisycre/common.h"
#include "noisycre/datastream.h"

namespace noisycre {

enum class ModelRole { kMain, kAuxiliary };

struct EncoderConfig {
  InputKind kind = InputKind::kVector;
  int embed_dim = 16;  // vector length for kVector, embedding width for kTokens
  int hidden_dim = 64;
  int out_dim = 32;
  int vocab_size = 0;  // kTokens only

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct ParamSlice {
  std::string name;
  size_t offset = 0;
  size_t rows = 0;
  size_t cols = 0;
  size_t size() const { return rows * cols; }
};

struct ModelState {
  ModelRole role = ModelRole::kMain;
  EncoderConfig config;
  int head_dim = 0;         // projection dim (main) or class count (auxiliary)
  int proj_hidden_dim = 0;  // main only
  bool normalize_projection = true;

  Vec params;
  std::vector<ParamSlice> slices;

  // Adam moments; reset by init_model.
  Vec adam_m;
  Vec adam_v;
  int64_t adam_step = 0;
  // Incremented by every optimizer step. Prototype sets remember the revision
  // they were computed under.
  uint64_t revision = 0;

  int proj_dim() const;
  int n_classes() const;
  const ParamSlice& slice(std::string_view name) const;
  std::span<const double> values(std::string_view name) const;
  std::span<double> values(std::string_view name);
  // Name of the slice containing flat parameter index `index`.
  const std::string& slice_of(size_t index) const;
};

// head_dim is the projection width for kMain and the class count for
// kAuxiliary. proj_hidden_dim <= 0 means "use config.hidden_dim".
ModelState init_model(ModelRole role, const EncoderConfig& config,
                      int head_dim, uint64_t seed, int proj_hidden_dim = 0);

Matrix embed_input(const ModelState& model, const InputRep& input);

struct EncoderTrace {
  Matrix embedded;
  bool from_tokens = false;  // embedding-table gradients only in this case
  std::vector<int32_t> tokens;
  Span head{0, 0};
  Span tail{0, 0};
  Vec pooled;
  Vec pre1;
  Vec act1;
  Vec out;
};

struct MainTrace {
  bool recorded = false;
  EncoderTrace enc;
  Vec pre_p1;
  Vec act_p1;
  Vec raw;
  double raw_norm = 0.0;
  Vec z;
};

struct AuxTrace {
  bool recorded = false;
  EncoderTrace enc;
  Vec logits;
  Vec probs;
};

struct MainOutput {
  Vec hidden;  // E_M(x)
  Vec z;       // Proj(E_M(x)), L2-normalized unless disabled
};

struct AuxOutput {
  Vec logits;
  Vec probs;
};

// Encoder output only (E_M or E_A).
Vec encode(const ModelState& model, const Matrix& embedded);

MainOutput forward_main(const ModelState& model, const Matrix& embedded,
                        MainTrace* trace = nullptr);
MainOutput forward_main(const ModelState& model, const InputRep& input,
                        MainTrace* trace = nullptr);
AuxOutput forward_aux(const ModelState& model, const Matrix& embedded,
                      AuxTrace* trace = nullptr);
AuxOutput forward_aux(const ModelState& model, const InputRep& input,
                      AuxTrace* trace = nullptr);

Vec softmax(std::span<const double> logits);

// Reverse passes. Parameter gradients are accumulated into `param_grad`
// (skipped when empty); the gradient w.r.t. the embedded input is written to
// `input_grad` when non-null. Throws StateError if the trace was never
// recorded by a forward pass.
void backward_main(const ModelState& model, const MainTrace& trace,
                   std::span<const double> grad_z,
                   std::span<const double> grad_hidden,
                   std::span<double> param_grad, Matrix* input_grad = nullptr);
void backward_aux(const ModelState& model, const AuxTrace& trace,
                  std::span<const double> grad_logits,
                  std::span<double> param_grad, Matrix* input_grad = nullptr);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update. Rejects non-finite gradients with a
// NumericalError naming the offending slice.
void optimizer_step(ModelState& model, std::span<const double> grads,
                    double lr, const AdamConfig& adam = {});

// Named-slice checkpoint in JSON with a mandatory format version.
void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

// Central finite-difference verification. Relative error per coordinate is
// |a - n| / max(|a|, |n|, floor); the floor keeps exactly-zero gradients
// (dead ReLU units) from reporting roundoff as relative error.
struct GradientReport {
  double max_rel_error = 0.0;
  std::string slice;
  size_t index = 0;
  size_t checked = 0;
};

GradientReport check_gradient(
    const std::function<double(std::span<const double>)>& loss,
    std::span<const double> point, std::span<const double> analytic,
    double h = 1e-5, double floor = 1e-6);

// Same check over a model's parameters; `loss` re-evaluates the objective for
// a perturbed copy of the model.
GradientReport check_parameter_gradient(
    const ModelState& model,
    const std::function<double(const ModelState&)>& loss,
    std::span<const double> analytic, double h = 1e-5, double floor = 1e-6);

}  // namespace noisycre

#endif  // NOISYCRE_MODELS_H_
