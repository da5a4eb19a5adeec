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

#include "noisycre/models.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace noisycre {

namespace {

using json = nlohmann::json;

constexpr int kCheckpointVersion = 1;
constexpr double kMinNorm = 1e-12;

struct Linear {
  const double* w = nullptr;
  const double* b = nullptr;
  size_t out = 0;
  size_t in = 0;
  size_t w_offset = 0;
  size_t b_offset = 0;
};

Linear linear(const ModelState& m, std::string_view w, std::string_view b) {
  const ParamSlice& ws = m.slice(w);
  const ParamSlice& bs = m.slice(b);
  return {m.params.data() + ws.offset, m.params.data() + bs.offset, ws.rows,
          ws.cols, ws.offset, bs.offset};
}

void apply(const Linear& l, std::span<const double> x, Vec& y) {
  y.assign(l.out, 0.0);
  for (size_t r = 0; r < l.out; ++r) {
    const double* row = l.w + r * l.in;
    double s = l.b[r];
    for (size_t c = 0; c < l.in; ++c) s += row[c] * x[c];
    y[r] = s;
  }
}

// dx = W^T dy (when dx != nullptr); dW += dy x^T and db += dy (when grads
// are requested).
void apply_backward(const Linear& l, std::span<const double> x,
                    std::span<const double> dy, std::span<double> param_grad,
                    Vec* dx) {
  if (!param_grad.empty()) {
    double* gw = param_grad.data() + l.w_offset;
    double* gb = param_grad.data() + l.b_offset;
    for (size_t r = 0; r < l.out; ++r) {
      const double g = dy[r];
      if (g == 0.0) continue;
      gb[r] += g;
      double* row = gw + r * l.in;
      for (size_t c = 0; c < l.in; ++c) row[c] += g * x[c];
    }
  }
  if (dx != nullptr) {
    dx->assign(l.in, 0.0);
    for (size_t r = 0; r < l.out; ++r) {
      const double g = dy[r];
      if (g == 0.0) continue;
      const double* row = l.w + r * l.in;
      for (size_t c = 0; c < l.in; ++c) (*dx)[c] += g * row[c];
    }
  }
}

void add_slice(ModelState& m, std::string name, size_t rows, size_t cols) {
  ParamSlice s{std::move(name), m.params.size(), rows, cols};
  m.params.resize(m.params.size() + s.size(), 0.0);
  m.slices.push_back(std::move(s));
}

void run_encoder(const ModelState& m, const Matrix& embedded,
                 EncoderTrace& t) {
  const size_t width = static_cast<size_t>(m.config.embed_dim);
  if (embedded.cols() != width || embedded.rows() == 0)
    throw ValidationError("embedded input has shape " +
                          std::to_string(embedded.rows()) + "x" +
                          std::to_string(embedded.cols()) + ", expected Lx" +
                          std::to_string(width));
  t.pooled.assign(width, 0.0);
  for (size_t r = 0; r < embedded.rows(); ++r) {
    const auto row = embedded.row(r);
    for (size_t c = 0; c < width; ++c) t.pooled[c] += row[c];
  }
  const double inv = 1.0 / static_cast<double>(embedded.rows());
  for (auto& v : t.pooled) v *= inv;

  apply(linear(m, "enc.w1", "enc.b1"), t.pooled, t.pre1);
  t.act1.resize(t.pre1.size());
  for (size_t i = 0; i < t.pre1.size(); ++i)
    t.act1[i] = t.pre1[i] > 0.0 ? t.pre1[i] : 0.0;
  apply(linear(m, "enc.w2", "enc.b2"), t.act1, t.out);
}

void encoder_backward(const ModelState& m, const EncoderTrace& t,
                      std::span<const double> d_out,
                      std::span<double> param_grad, Matrix* input_grad) {
  Vec d_act1;
  apply_backward(linear(m, "enc.w2", "enc.b2"), t.act1, d_out, param_grad,
                 &d_act1);
  for (size_t i = 0; i < d_act1.size(); ++i)
    if (t.pre1[i] <= 0.0) d_act1[i] = 0.0;
  Vec d_pooled;
  apply_backward(linear(m, "enc.w1", "enc.b1"), t.pooled, d_act1, param_grad,
                 &d_pooled);

  const size_t rows = t.embedded.rows();
  const size_t width = t.embedded.cols();
  const double inv = 1.0 / static_cast<double>(rows);
  if (input_grad != nullptr) {
    *input_grad = Matrix(rows, width);
    for (size_t r = 0; r < rows; ++r)
      for (size_t c = 0; c < width; ++c) (*input_grad)(r, c) = d_pooled[c] * inv;
  }
  if (t.from_tokens && !param_grad.empty()) {
    const ParamSlice& table = m.slice("embed.table");
    const ParamSlice& marker = m.slice("embed.marker");
    for (size_t r = 0; r < rows; ++r) {
      const int pos = static_cast<int>(r);
      double* g = param_grad.data() + table.offset +
                  static_cast<size_t>(t.tokens[r]) * width;
      for (size_t c = 0; c < width; ++c) g[c] += d_pooled[c] * inv;
      if (pos >= t.head[0] && pos <= t.head[1]) {
        double* gm = param_grad.data() + marker.offset;
        for (size_t c = 0; c < width; ++c) gm[c] += d_pooled[c] * inv;
      }
      if (pos >= t.tail[0] && pos <= t.tail[1]) {
        double* gm = param_grad.data() + marker.offset + width;
        for (size_t c = 0; c < width; ++c) gm[c] += d_pooled[c] * inv;
      }
    }
  }
}

void record_tokens(const InputRep& input, EncoderTrace& t) {
  if (input.kind != InputKind::kTokens) return;
  t.from_tokens = true;
  t.tokens = input.tokens;
  t.head = input.head;
  t.tail = input.tail;
}

const char* role_name(ModelRole role) {
  return role == ModelRole::kMain ? "main" : "auxiliary";
}

}  // namespace

void EncoderConfig::validate() const {
  if (embed_dim < 1 || hidden_dim < 1 || out_dim < 1)
    throw ConfigError("encoder dimensions must all be >= 1");
  if (kind == InputKind::kTokens && vocab_size < 1)
    throw ConfigError("token encoder needs vocab_size >= 1");
}

int ModelState::proj_dim() const {
  if (role != ModelRole::kMain) throw StateError("auxiliary model has no projector");
  return head_dim;
}

int ModelState::n_classes() const {
  if (role != ModelRole::kAuxiliary) throw StateError("main model has no classifier");
  return head_dim;
}

const ParamSlice& ModelState::slice(std::string_view name) const {
  for (const auto& s : slices)
    if (s.name == name) return s;
  throw LookupError("no parameter slice named '" + std::string(name) + "'");
}

std::span<const double> ModelState::values(std::string_view name) const {
  const ParamSlice& s = slice(name);
  return {params.data() + s.offset, s.size()};
}

std::span<double> ModelState::values(std::string_view name) {
  const ParamSlice& s = slice(name);
  return {params.data() + s.offset, s.size()};
}

const std::string& ModelState::slice_of(size_t index) const {
  for (const auto& s : slices)
    if (index >= s.offset && index < s.offset + s.size()) return s.name;
  throw LookupError("parameter index " + std::to_string(index) +
                    " out of range");
}

ModelState init_model(ModelRole role, const EncoderConfig& config,
                      int head_dim, uint64_t seed, int proj_hidden_dim) {
  config.validate();
  if (head_dim < 1) throw ConfigError("head dimension must be >= 1");

  ModelState m;
  m.role = role;
  m.config = config;
  m.head_dim = head_dim;
  m.proj_hidden_dim =
      role == ModelRole::kMain
          ? (proj_hidden_dim > 0 ? proj_hidden_dim : config.hidden_dim)
          : 0;

  const auto e = static_cast<size_t>(config.embed_dim);
  const auto h = static_cast<size_t>(config.hidden_dim);
  const auto o = static_cast<size_t>(config.out_dim);
  const auto head = static_cast<size_t>(head_dim);
  if (config.kind == InputKind::kTokens) {
    add_slice(m, "embed.table", static_cast<size_t>(config.vocab_size), e);
    add_slice(m, "embed.marker", 2, e);
  }
  add_slice(m, "enc.w1", h, e);
  add_slice(m, "enc.b1", h, 1);
  add_slice(m, "enc.w2", o, h);
  add_slice(m, "enc.b2", o, 1);
  if (role == ModelRole::kMain) {
    const auto ph = static_cast<size_t>(m.proj_hidden_dim);
    add_slice(m, "proj.w1", ph, o);
    add_slice(m, "proj.b1", ph, 1);
    add_slice(m, "proj.w2", head, ph);
    add_slice(m, "proj.b2", head, 1);
  } else {
    add_slice(m, "cls.w", head, o);
    add_slice(m, "cls.b", head, 1);
  }

  // Symmetric uniform init scaled by fan-in; a weight and its bias share the
  // fan-in of the weight. Embedding lookups have fan-in 1.
  Rng rng(derive_seed(seed, 0x1417));
  for (size_t k = 0; k < m.slices.size(); ++k) {
    const ParamSlice& s = m.slices[k];
    double fan_in = 1.0;
    if (s.name.find(".b") != std::string::npos) {
      fan_in = static_cast<double>(m.slices[k - 1].cols);
    } else if (!s.name.starts_with("embed.")) {
      fan_in = static_cast<double>(s.cols);
    }
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (size_t i = 0; i < s.size(); ++i) m.params[s.offset + i] = dist(rng);
  }
  m.adam_m.assign(m.params.size(), 0.0);
  m.adam_v.assign(m.params.size(), 0.0);
  return m;
}

Matrix embed_input(const ModelState& model, const InputRep& input) {
  if (input.kind != model.config.kind)
    throw ValidationError("input kind does not match the model's encoder");
  if (input.kind == InputKind::kVector) {
    if (input.vector.size() != static_cast<size_t>(model.config.embed_dim))
      throw ValidationError("vector input has length " +
                            std::to_string(input.vector.size()) +
                            ", expected " +
                            std::to_string(model.config.embed_dim));
    return Matrix::row_vector(input.vector);
  }
  if (input.tokens.empty()) throw ValidationError("empty token sequence");
  const auto width = static_cast<size_t>(model.config.embed_dim);
  const auto table = model.values("embed.table");
  const auto marker = model.values("embed.marker");
  Matrix out(input.tokens.size(), width);
  for (size_t r = 0; r < input.tokens.size(); ++r) {
    const int32_t tok = input.tokens[r];
    if (tok < 0 || tok >= model.config.vocab_size)
      throw ValidationError("token id " + std::to_string(tok) +
                            " outside vocabulary of size " +
                            std::to_string(model.config.vocab_size));
    const int pos = static_cast<int>(r);
    auto row = out.row(r);
    for (size_t c = 0; c < width; ++c) {
      double v = table[static_cast<size_t>(tok) * width + c];
      if (pos >= input.head[0] && pos <= input.head[1]) v += marker[c];
      if (pos >= input.tail[0] && pos <= input.tail[1]) v += marker[width + c];
      row[c] = v;
    }
  }
  return out;
}

Vec encode(const ModelState& model, const Matrix& embedded) {
  EncoderTrace t;
  run_encoder(model, embedded, t);
  return std::move(t.out);
}

Vec softmax(std::span<const double> logits) {
  Vec p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (auto& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

MainOutput forward_main(const ModelState& model, const Matrix& embedded,
                        MainTrace* trace) {
  if (model.role != ModelRole::kMain)
    throw StateError("forward_main called on an auxiliary model");
  MainTrace local;
  MainTrace& t = trace != nullptr ? *trace : local;
  t.enc.embedded = embedded;
  run_encoder(model, embedded, t.enc);
  apply(linear(model, "proj.w1", "proj.b1"), t.enc.out, t.pre_p1);
  t.act_p1.resize(t.pre_p1.size());
  for (size_t i = 0; i < t.pre_p1.size(); ++i)
    t.act_p1[i] = t.pre_p1[i] > 0.0 ? t.pre_p1[i] : 0.0;
  apply(linear(model, "proj.w2", "proj.b2"), t.act_p1, t.raw);
  t.raw_norm = l2_norm(t.raw);
  t.z = t.raw;
  if (model.normalize_projection) {
    const double n = std::max(t.raw_norm, kMinNorm);
    for (auto& v : t.z) v /= n;
  }
  t.recorded = true;
  return {t.enc.out, t.z};
}

MainOutput forward_main(const ModelState& model, const InputRep& input,
                        MainTrace* trace) {
  MainTrace local;
  MainTrace& t = trace != nullptr ? *trace : local;
  MainOutput out = forward_main(model, embed_input(model, input), &t);
  record_tokens(input, t.enc);
  return out;
}

AuxOutput forward_aux(const ModelState& model, const Matrix& embedded,
                      AuxTrace* trace) {
  if (model.role != ModelRole::kAuxiliary)
    throw StateError("forward_aux called on a main model");
  AuxTrace local;
  AuxTrace& t = trace != nullptr ? *trace : local;
  t.enc.embedded = embedded;
  run_encoder(model, embedded, t.enc);
  apply(linear(model, "cls.w", "cls.b"), t.enc.out, t.logits);
  t.probs = softmax(t.logits);
  t.recorded = true;
  return {t.logits, t.probs};
}

AuxOutput forward_aux(const ModelState& model, const InputRep& input,
                      AuxTrace* trace) {
  AuxTrace local;
  AuxTrace& t = trace != nullptr ? *trace : local;
  AuxOutput out = forward_aux(model, embed_input(model, input), &t);
  record_tokens(input, t.enc);
  return out;
}

void backward_main(const ModelState& model, const MainTrace& trace,
                   std::span<const double> grad_z,
                   std::span<const double> grad_hidden,
                   std::span<double> param_grad, Matrix* input_grad) {
  if (!trace.recorded) throw StateError("backward_main without a forward pass");
  if (!param_grad.empty() && param_grad.size() != model.params.size())
    throw ValidationError("parameter gradient buffer has the wrong size");

  Vec d_raw(trace.raw.size(), 0.0);
  if (!grad_z.empty()) {
    if (model.normalize_projection) {
      // z = r / |r|  =>  dr = (dz - z (z . dz)) / |r|
      const double n = std::max(trace.raw_norm, kMinNorm);
      const double zdz = dot(trace.z, grad_z);
      for (size_t i = 0; i < d_raw.size(); ++i)
        d_raw[i] = (grad_z[i] - trace.z[i] * zdz) / n;
    } else {
      std::copy(grad_z.begin(), grad_z.end(), d_raw.begin());
    }
  }
  Vec d_act;
  apply_backward(linear(model, "proj.w2", "proj.b2"), trace.act_p1, d_raw,
                 param_grad, &d_act);
  for (size_t i = 0; i < d_act.size(); ++i)
    if (trace.pre_p1[i] <= 0.0) d_act[i] = 0.0;
  Vec d_hidden;
  apply_backward(linear(model, "proj.w1", "proj.b1"), trace.enc.out, d_act,
                 param_grad, &d_hidden);
  if (!grad_hidden.empty())
    for (size_t i = 0; i < d_hidden.size(); ++i) d_hidden[i] += grad_hidden[i];
  encoder_backward(model, trace.enc, d_hidden, param_grad, input_grad);
}

void backward_aux(const ModelState& model, const AuxTrace& trace,
                  std::span<const double> grad_logits,
                  std::span<double> param_grad, Matrix* input_grad) {
  if (!trace.recorded) throw StateError("backward_aux without a forward pass");
  if (!param_grad.empty() && param_grad.size() != model.params.size())
    throw ValidationError("parameter gradient buffer has the wrong size");
  Vec d_hidden;
  apply_backward(linear(model, "cls.w", "cls.b"), trace.enc.out, grad_logits,
                 param_grad, &d_hidden);
  encoder_backward(model, trace.enc, d_hidden, param_grad, input_grad);
}

void optimizer_step(ModelState& model, std::span<const double> grads,
                    double lr, const AdamConfig& adam) {
  if (grads.size() != model.params.size())
    throw ValidationError("gradient size " + std::to_string(grads.size()) +
                          " does not match parameter count " +
                          std::to_string(model.params.size()));
  for (size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NumericalError("non-finite gradient in slice '" +
                           model.slice_of(i) + "'");
  if (model.adam_m.size() != model.params.size()) {
    model.adam_m.assign(model.params.size(), 0.0);
    model.adam_v.assign(model.params.size(), 0.0);
  }
  ++model.adam_step;
  const double t = static_cast<double>(model.adam_step);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  for (size_t i = 0; i < grads.size(); ++i) {
    const double g = grads[i];
    model.adam_m[i] = adam.beta1 * model.adam_m[i] + (1.0 - adam.beta1) * g;
    model.adam_v[i] = adam.beta2 * model.adam_v[i] + (1.0 - adam.beta2) * g * g;
    const double m_hat = model.adam_m[i] / c1;
    const double v_hat = model.adam_v[i] / c2;
    model.params[i] -= lr * m_hat / (std::sqrt(v_hat) + adam.eps);
  }
  ++model.revision;
}

void save_checkpoint(const ModelState& model,
                     const std::filesystem::path& path) {
  json j;
  j["format"] = "noisycre-checkpoint";
  j["version"] = kCheckpointVersion;
  j["role"] = role_name(model.role);
  j["config"] = {{"kind", model.config.kind == InputKind::kVector ? "vector"
                                                                   : "tokens"},
                 {"embed_dim", model.config.embed_dim},
                 {"hidden_dim", model.config.hidden_dim},
                 {"out_dim", model.config.out_dim},
                 {"vocab_size", model.config.vocab_size}};
  j["head_dim"] = model.head_dim;
  j["proj_hidden_dim"] = model.proj_hidden_dim;
  j["normalize_projection"] = model.normalize_projection;
  json slices = json::array();
  for (const auto& s : model.slices) {
    const auto v = model.values(s.name);
    slices.push_back({{"name", s.name},
                      {"rows", s.rows},
                      {"cols", s.cols},
                      {"values", std::vector<double>(v.begin(), v.end())}});
  }
  j["slices"] = std::move(slices);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!j.contains("version"))
    throw ParseError(path.string() + ": checkpoint has no version field");
  if (j["version"].get<int>() != kCheckpointVersion)
    throw ParseError(path.string() + ": unsupported checkpoint version " +
                     j["version"].dump());
  try {
    EncoderConfig cfg;
    const auto& c = j.at("config");
    cfg.kind = c.at("kind").get<std::string>() == "tokens" ? InputKind::kTokens
                                                          : InputKind::kVector;
    cfg.embed_dim = c.at("embed_dim").get<int>();
    cfg.hidden_dim = c.at("hidden_dim").get<int>();
    cfg.out_dim = c.at("out_dim").get<int>();
    cfg.vocab_size = c.at("vocab_size").get<int>();
    const ModelRole role = j.at("role").get<std::string>() == "main"
                               ? ModelRole::kMain
                               : ModelRole::kAuxiliary;
    ModelState m = init_model(role, cfg, j.at("head_dim").get<int>(), 0,
                              j.at("proj_hidden_dim").get<int>());
    m.normalize_projection = j.at("normalize_projection").get<bool>();
    for (const auto& s : j.at("slices")) {
      auto dst = m.values(s.at("name").get<std::string>());
      const auto values = s.at("values").get<std::vector<double>>();
      if (values.size() != dst.size())
        throw ParseError("slice '" + s.at("name").get<std::string>() +
                         "' has the wrong size");
      std::copy(values.begin(), values.end(), dst.begin());
    }
    return m;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const LookupError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

GradientReport check_gradient(
    const std::function<double(std::span<const double>)>& loss,
    std::span<const double> point, std::span<const double> analytic,
    double h, double floor) {
  if (point.size() != analytic.size())
    throw ValidationError("gradient check: size mismatch");
  GradientReport report;
  report.slice = "input";
  Vec x(point.begin(), point.end());
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss(x);
    x[i] = saved - h;
    const double down = loss(x);
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom =
        std::max({std::abs(numeric), std::abs(analytic[i]), floor});
    const double rel = std::abs(numeric - analytic[i]) / denom;
    if (report.checked == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.index = i;
    }
    ++report.checked;
  }
  return report;
}

GradientReport check_parameter_gradient(
    const ModelState& model,
    const std::function<double(const ModelState&)>& loss,
    std::span<const double> analytic, double h, double floor) {
  ModelState probe = model;
  GradientReport report = check_gradient(
      [&](std::span<const double> p) {
        std::copy(p.begin(), p.end(), probe.params.begin());
        return loss(probe);
      },
      model.params, analytic, h, floor);
  report.slice = model.slice_of(report.index);
  return report;
}

}  // namespace noisycre
