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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "noisycre/harness.h"

namespace noisycre {

using json = nlohmann::json;

namespace {

constexpr int kMetricsVersion = 1;

json opt(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> opt_from(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string fixed(const std::optional<double>& v, int digits) {
  return v ? fixed(*v, digits) : "n/a";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

// Minimal SVG chart writer.
class Chart {
 public:
  Chart(std::string title, std::string x_label, std::string y_label)
      : title_(std::move(title)),
        x_label_(std::move(x_label)),
        y_label_(std::move(y_label)) {}

  void set_y_range(double lo, double hi) {
    y_lo_ = lo;
    y_hi_ = hi;
    fixed_y_ = true;
  }

  void line(const std::string& name, const std::vector<double>& ys) {
    series_.push_back({name, ys, false});
  }
  void bars(const std::string& name, const std::vector<double>& ys) {
    series_.push_back({name, ys, true});
  }

  std::string svg() const {
    constexpr double kW = 640, kH = 400, kL = 60, kR = 150, kT = 40, kB = 50;
    size_t n = 0;
    double lo = y_lo_, hi = y_hi_;
    bool any = false;
    for (const auto& s : series_) {
      n = std::max(n, s.ys.size());
      for (double y : s.ys) {
        if (!std::isfinite(y)) continue;
        if (!fixed_y_) {
          lo = any ? std::min(lo, y) : y;
          hi = any ? std::max(hi, y) : y;
        }
        any = true;
      }
    }
    if (!fixed_y_) lo = std::min(lo, 0.0);
    if (hi <= lo) hi = lo + 1.0;
    const double pw = kW - kL - kR, ph = kH - kT - kB;
    auto px = [&](double i) {
      return kL + (n <= 1 ? pw / 2 : pw * i / static_cast<double>(n - 1));
    };
    auto py = [&](double y) { return kT + ph * (1.0 - (y - lo) / (hi - lo)); };

    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                    "#ff7f0e", "#9467bd", "#8c564b"};
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
      << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" "
      << "font-size=\"14\">" << title_ << "</text>\n"
      << "<line x1=\"" << kL << "\" y1=\"" << kT + ph << "\" x2=\"" << kL + pw
      << "\" y2=\"" << kT + ph << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL
      << "\" y2=\"" << kT + ph << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << kL + pw / 2 << "\" y=\"" << kH - 10
      << "\" text-anchor=\"middle\">" << x_label_ << "</text>\n"
      << "<text x=\"15\" y=\"" << kT + ph / 2 << "\" transform=\"rotate(-90 15 "
      << kT + ph / 2 << ")\" text-anchor=\"middle\">" << y_label_ << "</text>\n";
    for (int t = 0; t <= 4; ++t) {
      const double y = lo + (hi - lo) * t / 4.0;
      o << "<text x=\"" << kL - 5 << "\" y=\"" << py(y) + 4
        << "\" text-anchor=\"end\">" << fixed(y, 2) << "</text>\n";
    }
    for (size_t i = 0; i < n; ++i)
      o << "<text x=\"" << px(static_cast<double>(i)) << "\" y=\"" << kT + ph + 15
        << "\" text-anchor=\"middle\">" << i + 1 << "</text>\n";

    size_t n_bars = 0;
    for (const auto& s : series_) n_bars += s.is_bar ? 1 : 0;
    size_t bar_idx = 0;
    for (size_t si = 0; si < series_.size(); ++si) {
      const auto& s = series_[si];
      const char* color = kColors[si % 6];
      if (s.is_bar) {
        const double slot = n <= 1 ? pw / 2 : pw / static_cast<double>(n);
        const double bw = slot * 0.8 / static_cast<double>(std::max<size_t>(n_bars, 1));
        for (size_t i = 0; i < s.ys.size(); ++i) {
          if (!std::isfinite(s.ys[i])) continue;
          const double x = px(static_cast<double>(i)) - slot * 0.4 +
                           bw * static_cast<double>(bar_idx);
          const double top = py(s.ys[i]);
          o << "<rect x=\"" << x << "\" y=\"" << std::min(top, py(lo))
            << "\" width=\"" << bw << "\" height=\""
            << std::abs(py(lo) - top) << "\" fill=\"" << color << "\"/>\n";
        }
        ++bar_idx;
      } else {
        o << "<polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < s.ys.size(); ++i)
          if (std::isfinite(s.ys[i]))
            o << px(static_cast<double>(i)) << ',' << py(s.ys[i]) << ' ';
        o << "\"/>\n";
      }
      o << "<rect x=\"" << kW - kR + 10 << "\" y=\"" << kT + 18 * si
        << "\" width=\"12\" height=\"12\" fill=\"" << color << "\"/>\n"
        << "<text x=\"" << kW - kR + 28 << "\" y=\"" << kT + 18 * si + 11
        << "\">" << s.name << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
  }

 private:
  struct Series {
    std::string name;
    std::vector<double> ys;
    bool is_bar;
  };
  std::string title_, x_label_, y_label_;
  std::vector<Series> series_;
  double y_lo_ = 0.0, y_hi_ = 1.0;
  bool fixed_y_ = false;
};

json task_to_json(const TaskRecord& t) {
  json losses = json::array();
  for (const auto& l : t.losses)
    losses.push_back({{"phase", l.phase},
                      {"epoch", l.epoch},
                      {"mean_loss", l.mean_loss},
                      {"batches", l.batches},
                      {"degenerate_batches", l.degenerate_batches},
                      {"skipped_anchors", l.skipped_anchors}});
  return {{"task", t.task},
          {"n_train", t.n_train},
          {"gamma", t.gamma},
          {"n_clean", t.n_clean},
          {"n_noisy", t.n_noisy},
          {"selected_truly_clean", t.selected_truly_clean},
          {"truly_clean", t.truly_clean},
          {"precision", opt(t.precision)},
          {"recall", opt(t.recall)},
          {"confidence_separation", opt(t.confidence_separation)},
          {"asr", opt(t.asr)},
          {"att_pos", t.att_pos},
          {"neg", t.neg},
          {"target_prob_before", opt(t.target_prob_before)},
          {"target_prob_after", opt(t.target_prob_after)},
          {"max_abs_delta", opt(t.max_abs_delta)},
          {"buffer_size", t.buffer_size},
          {"buffer_purity", opt(t.buffer_purity)},
          {"skipped_relations", t.skipped_relations},
          {"losses", std::move(losses)}};
}

TaskRecord task_from_json(const json& j) {
  TaskRecord t;
  t.task = j.at("task").get<int>();
  t.n_train = j.at("n_train").get<size_t>();
  t.gamma = j.at("gamma").get<double>();
  t.n_clean = j.at("n_clean").get<size_t>();
  t.n_noisy = j.at("n_noisy").get<size_t>();
  t.selected_truly_clean = j.at("selected_truly_clean").get<size_t>();
  t.truly_clean = j.at("truly_clean").get<size_t>();
  t.precision = opt_from(j, "precision");
  t.recall = opt_from(j, "recall");
  t.confidence_separation = opt_from(j, "confidence_separation");
  t.asr = opt_from(j, "asr");
  t.att_pos = j.at("att_pos").get<size_t>();
  t.neg = j.at("neg").get<size_t>();
  t.target_prob_before = opt_from(j, "target_prob_before");
  t.target_prob_after = opt_from(j, "target_prob_after");
  t.max_abs_delta = opt_from(j, "max_abs_delta");
  t.buffer_size = j.at("buffer_size").get<size_t>();
  t.buffer_purity = opt_from(j, "buffer_purity");
  t.skipped_relations = j.at("skipped_relations").get<std::vector<int>>();
  for (const auto& l : j.at("losses"))
    t.losses.push_back({l.at("phase").get<std::string>(),
                        l.at("epoch").get<int>(),
                        l.at("mean_loss").get<double>(),
                        l.at("batches").get<size_t>(),
                        l.at("degenerate_batches").get<size_t>(),
                        l.at("skipped_anchors").get<size_t>()});
  return t;
}

std::string summary_text(const RunReport& r) {
  std::ostringstream o;
  o << "method " << r.method << "  seed " << r.seed << '\n'
    << "last accuracy        " << fixed(r.last_accuracy, 4) << '\n'
    << "normalized forgetting " << fixed(r.normalized_forgetting, 4) << "\n\n"
    << "accuracy matrix (row: after task k, column: test set of task j)\n";
  for (size_t k = 0; k < r.accuracy.size(); ++k) {
    o << "  T" << k + 1 << ' ';
    for (double a : r.accuracy[k]) o << ' ' << fixed(a, 3);
    o << '\n';
  }
  o << "\ntask  train  clean  noisy  prec   recall asr    purity\n";
  for (const auto& t : r.tasks) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-5d %-6zu %-6zu %-6zu %-6s %-6s %-6s %-6s\n",
                  t.task + 1, t.n_train, t.n_clean, t.n_noisy,
                  fixed(t.precision, 3).c_str(), fixed(t.recall, 3).c_str(),
                  fixed(t.asr, 3).c_str(), fixed(t.buffer_purity, 3).c_str());
    o << line;
  }
  return o.str();
}

double nan_or(const std::optional<double>& v) {
  return v ? *v : std::nan("");
}

}  // namespace

json report_to_json(const RunReport& r) {
  json tasks = json::array();
  for (const auto& t : r.tasks) tasks.push_back(task_to_json(t));
  json events = json::array();
  for (const auto& e : r.events)
    events.push_back({{"seq", e.seq}, {"task", e.task}, {"phase", e.phase}});
  return {{"version", kMetricsVersion},
          {"method", r.method},
          {"seed", r.seed},
          {"config", r.config},
          {"accuracy", r.accuracy},
          {"test_sizes", r.test_sizes},
          {"last_accuracy", opt(r.last_accuracy)},
          {"normalized_forgetting", opt(r.normalized_forgetting)},
          {"tasks", std::move(tasks)},
          {"events", std::move(events)}};
}

RunReport report_from_json(const json& j) {
  try {
    if (!j.contains("version"))
      throw ParseError("metrics file has no version field");
    if (j.at("version").get<int>() != kMetricsVersion)
      throw ParseError("unsupported metrics version " +
                       j.at("version").dump());
    RunReport r;
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.config = j.at("config");
    r.accuracy = j.at("accuracy").get<std::vector<std::vector<double>>>();
    r.test_sizes = j.at("test_sizes").get<std::vector<size_t>>();
    r.last_accuracy = opt_from(j, "last_accuracy");
    r.normalized_forgetting = opt_from(j, "normalized_forgetting");
    for (const auto& t : j.at("tasks")) r.tasks.push_back(task_from_json(t));
    for (const auto& e : j.at("events"))
      r.events.push_back({e.at("seq").get<uint64_t>(), e.at("task").get<int>(),
                          e.at("phase").get<std::string>()});
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed metrics: ") + e.what());
  }
}

RunReport read_report(const std::filesystem::path& metrics_file) {
  std::ifstream in(metrics_file);
  if (!in) throw IoError("cannot open " + metrics_file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(metrics_file.string() + ": " + e.what());
  }
  return report_from_json(j);
}

void emit_report(const RunResult& result, const std::filesystem::path& dir,
                 const EmitOptions& options) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const RunReport& r = result.report;
  write_text(dir / "metrics.json", report_to_json(r).dump(1) + "\n");
  write_text(dir / "timing.json",
             json({{"task_seconds", result.task_seconds}}).dump(1) + "\n");
  write_text(dir / "summary.txt", summary_text(r));
  for (size_t k = 0; k < result.audits.size(); ++k)
    write_text(dir / ("audit_task_" + std::to_string(k + 1) + ".json"),
               result.audits[k].dump(1) + "\n");
  if (!result.embedding_dump.is_null())
    write_text(dir / "embedding_2d.json", result.embedding_dump.dump(1) + "\n");
  if (!options.plots) return;

  Chart acc("Accuracy on seen tasks", "task", "accuracy");
  acc.set_y_range(0.0, 1.0);
  acc.line(r.method, accuracy_curve(r));
  write_text(dir / "accuracy.svg", acc.svg());

  // Confidence histogram over all tasks, split by the true corruption flag.
  constexpr int kBins = 20;
  std::vector<double> clean(kBins, 0.0), noisy(kBins, 0.0);
  for (const auto& audit : result.audits) {
    const auto it = audit.find("selection");
    if (it == audit.end()) continue;
    for (const auto& row : *it) {
      const double c = row.at("confidence").get<double>();
      const int b = std::clamp(static_cast<int>(c * kBins), 0, kBins - 1);
      (row.at("corrupted").get<bool>() ? noisy : clean)[static_cast<size_t>(b)] += 1;
    }
  }
  Chart conf("Confidence in observed label", "bin (width 0.05)", "count");
  conf.bars("clean", clean);
  conf.bars("corrupted", noisy);
  write_text(dir / "confidence.svg", conf.svg());

  Chart loss("Training loss per epoch", "epoch (all tasks)", "mean loss");
  std::map<std::string, std::vector<double>> curves;
  for (const auto& t : r.tasks)
    for (const auto& l : t.losses) curves[l.phase].push_back(l.mean_loss);
  for (const auto& [phase, ys] : curves) loss.line(phase, ys);
  write_text(dir / "loss.svg", loss.svg());

  Chart asr("Attack success rate", "task", "ASR");
  asr.set_y_range(0.0, 1.0);
  std::vector<double> asr_ys;
  for (const auto& t : r.tasks) asr_ys.push_back(nan_or(t.asr));
  asr.bars("ASR", asr_ys);
  write_text(dir / "asr.svg", asr.svg());
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream o;
  o << "method         seeds  last_acc(median)  forgetting(median)  purity(median)\n";
  auto med = [](const std::vector<std::optional<double>>& v) {
    std::vector<double> d;
    for (const auto& x : v)
      if (x) d.push_back(*x);
    return d.empty() ? std::optional<double>() : std::optional<double>(median(d));
  };
  for (const auto& row : rows) {
    const std::optional<double> acc =
        row.last_accuracy.empty() ? std::nullopt
                                  : std::optional<double>(median(row.last_accuracy));
    char line[200];
    std::snprintf(line, sizeof(line), "%-14s %-6zu %-17s %-19s %s\n",
                  row.method.c_str(), row.last_accuracy.size(),
                  fixed(acc, 4).c_str(), fixed(med(row.forgetting), 4).c_str(),
                  fixed(med(row.purity), 4).c_str());
    o << line;
  }
  return o.str();
}

void emit_sweep(const std::vector<SweepRow>& rows,
                const std::filesystem::path& dir, bool plots) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "sweep.txt", sweep_table(rows));
  json j = json::array();
  for (const auto& row : rows) {
    json f = json::array(), p = json::array();
    for (const auto& x : row.forgetting) f.push_back(opt(x));
    for (const auto& x : row.purity) p.push_back(opt(x));
    j.push_back({{"method", row.method},
                 {"last_accuracy", row.last_accuracy},
                 {"normalized_forgetting", f},
                 {"buffer_purity", p},
                 {"curves", row.curves}});
  }
  write_text(dir / "sweep.json", j.dump(1) + "\n");
  if (!plots) return;
  Chart acc("Accuracy on seen tasks (seed mean)", "task", "accuracy");
  acc.set_y_range(0.0, 1.0);
  for (const auto& row : rows) {
    if (row.curves.empty()) continue;
    std::vector<double> mean(row.curves[0].size(), 0.0);
    for (const auto& c : row.curves)
      for (size_t i = 0; i < mean.size() && i < c.size(); ++i) mean[i] += c[i];
    for (auto& v : mean) v /= static_cast<double>(row.curves.size());
    acc.line(row.method, mean);
  }
  write_text(dir / "accuracy.svg", acc.svg());
}

}  // namespace noisycre
