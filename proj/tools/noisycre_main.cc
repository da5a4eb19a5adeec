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

// noisycre command line: gen-stream, run, ablate, report, default-config.
//
// Outputs go under $NOISYCRE_OUTPUT_ROOT (default ./noisycre_out) unless an
// absolute --out is given.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "noisycre/harness.h"

namespace fs = std::filesystem;
using noisycre::RunConfig;

namespace {

class CommandError : public std::runtime_error {
 public:
  CommandError(std::string phase, const std::string& message)
      : std::runtime_error("[phase=" + phase + "] " + message) {}
};

fs::path output_root() {
  const char* env = std::getenv("NOISYCRE_OUTPUT_ROOT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("noisycre_out");
}

fs::path resolve_out(const std::string& out, const fs::path& fallback) {
  if (out.empty()) return output_root() / fallback;
  const fs::path p(out);
  return p.is_absolute() ? p : output_root() / p;
}

template <typename Fn>
auto tagged(const char* phase, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const noisycre::PhaseError&) {
    throw;
  } catch (const std::exception& e) {
    throw CommandError(phase, e.what());
  }
}

RunConfig load(const std::string& path) {
  return tagged("config", [&] {
    return path.empty() ? RunConfig{} : noisycre::load_config(path);
  });
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

noisycre::RunResult load_run(const fs::path& dir) {
  noisycre::RunResult result;
  result.report = noisycre::read_report(dir / "metrics.json");
  for (size_t k = 1;; ++k) {
    const fs::path audit = dir / ("audit_task_" + std::to_string(k) + ".json");
    if (!fs::exists(audit)) break;
    std::ifstream in(audit);
    result.audits.push_back(nlohmann::json::parse(in));
  }
  const fs::path timing = dir / "timing.json";
  if (fs::exists(timing)) {
    std::ifstream in(timing);
    result.task_seconds = nlohmann::json::parse(in)
                              .at("task_seconds")
                              .get<std::vector<double>>();
  }
  return result;
}

void add_to_rows(std::vector<noisycre::SweepRow>& rows,
                 const noisycre::RunReport& r) {
  auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& row) {
    return row.method == r.method;
  });
  if (it == rows.end()) {
    rows.push_back({r.method, {}, {}, {}, {}});
    it = rows.end() - 1;
  }
  it->last_accuracy.push_back(r.last_accuracy.value_or(0.0));
  it->forgetting.push_back(r.normalized_forgetting);
  it->purity.push_back(r.tasks.empty() ? std::nullopt
                                       : r.tasks.back().buffer_purity);
  it->curves.push_back(noisycre::accuracy_curve(r));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noisy continual relation extraction laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  bool no_plots = false;

  auto* gen = app.add_subcommand("gen-stream", "Build a task stream and write its manifest");
  gen->add_option("-c,--config", config_path, "Run configuration (JSON)");
  gen->add_option("-o,--out", out, "Output directory");

  auto* run = app.add_subcommand("run", "Run one method over the stream");
  std::string method_override;
  std::optional<uint64_t> seed_override;
  run->add_option("-c,--config", config_path, "Run configuration (JSON)");
  run->add_option("-o,--out", out, "Output directory");
  run->add_option("-m,--method", method_override,
                  "nacl | discard | noise-retain | finetune | joint");
  run->add_option("-s,--seed", seed_override, "Master seed");
  run->add_flag("--no-plots", no_plots, "Write metrics files only");

  auto* ablate = app.add_subcommand("ablate", "Sweep methods over several seeds");
  std::string methods_arg = "nacl,noise-retain,discard,finetune,joint";
  std::string seeds_arg = "0,1,2,3,4";
  bool joint_noisy = false;
  ablate->add_option("-c,--config", config_path, "Run configuration (JSON)");
  ablate->add_option("-o,--out", out, "Output directory");
  ablate->add_option("--methods", methods_arg, "Comma-separated methods");
  ablate->add_option("--seeds", seeds_arg, "Comma-separated seeds");
  ablate->add_flag("--joint-noisy", joint_noisy,
                   "Train the joint baseline on the noisy stream instead of clean data");
  ablate->add_flag("--no-plots", no_plots, "Write metrics files only");

  auto* report = app.add_subcommand("report", "Tables and plots from stored runs");
  std::vector<std::string> run_dirs;
  report->add_option("runs", run_dirs, "Run directories holding metrics.json")
      ->required();
  report->add_option("-o,--out", out, "Output directory for a multi-run table");
  report->add_flag("--no-plots", no_plots, "Skip plot files");

  auto* defaults = app.add_subcommand("default-config", "Print the default configuration");
  defaults->add_option("-o,--out", out, "Write to this file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      const RunConfig config = load(config_path);
      const auto built = tagged("stream", [&] { return noisycre::build_stream(config); });
      const fs::path dir = resolve_out(out, "stream");
      tagged("write", [&] {
        fs::create_directories(dir);
        noisycre::write_manifest(built.stream, dir / "manifest.json");
        noisycre::save_config(config, dir / "config.json");
      });
      size_t test = 0;
      for (const auto& t : built.test_sets) test += t.size();
      std::cout << "tasks " << built.stream.n_tasks << ", train examples "
                << built.stream.total_examples() << ", test examples " << test
                << ", realized noise " << built.stream.noise_rate << '\n'
                << "manifest: " << (dir / "manifest.json").string() << '\n';
    } else if (*run) {
      RunConfig config = load(config_path);
      tagged("config", [&] {
        if (!method_override.empty())
          config.method = noisycre::parse_method(method_override);
        if (seed_override) config.seed = *seed_override;
        config.validate();
      });
      const fs::path dir = resolve_out(
          out, fs::path("runs") / (std::string(noisycre::to_string(config.method)) +
                                   "-seed" + std::to_string(config.seed)));
      noisycre::RunOptions options;
      options.failure_checkpoint = dir / "failed_main_checkpoint.json";
      tagged("write", [&] { fs::create_directories(dir); });
      const auto built = tagged("stream", [&] { return noisycre::build_stream(config); });
      const auto result = noisycre::run_stream(config, built, options);
      tagged("write", [&] {
        noisycre::save_config(config, dir / "config.json");
        noisycre::emit_report(result, dir, {!no_plots});
      });
      std::cout << "last accuracy "
                << result.report.last_accuracy.value_or(0.0) << '\n'
                << "report: " << dir.string() << '\n';
    } else if (*ablate) {
      const RunConfig base = load(config_path);
      std::vector<noisycre::Method> methods;
      std::vector<uint64_t> seeds;
      tagged("config", [&] {
        for (const auto& m : split(methods_arg))
          methods.push_back(noisycre::parse_method(m));
        for (const auto& s : split(seeds_arg)) seeds.push_back(std::stoull(s));
        if (methods.empty() || seeds.empty())
          throw noisycre::ConfigError("ablate needs at least one method and seed");
      });
      const fs::path dir = resolve_out(out, "ablate");
      std::vector<noisycre::SweepRow> rows;
      for (auto method : methods) {
        for (uint64_t seed : seeds) {
          RunConfig config = base;
          config.method = method;
          config.seed = seed;
          if (method == noisycre::Method::kJoint && !joint_noisy)
            config.stream.noise_rate = 0.0;
          const auto built =
              tagged("stream", [&] { return noisycre::build_stream(config); });
          const auto result = noisycre::run_stream(config, built);
          const fs::path run_dir =
              dir / (std::string(noisycre::to_string(method)) + "-seed" +
                     std::to_string(seed));
          tagged("write", [&] {
            noisycre::emit_report(result, run_dir, {!no_plots});
            noisycre::save_config(config, run_dir / "config.json");
          });
          add_to_rows(rows, result.report);
          std::cerr << noisycre::to_string(method) << " seed " << seed
                    << " last accuracy "
                    << result.report.last_accuracy.value_or(0.0) << '\n';
        }
      }
      tagged("write", [&] { noisycre::emit_sweep(rows, dir, !no_plots); });
      std::cout << noisycre::sweep_table(rows) << "sweep: " << dir.string() << '\n';
    } else if (*report) {
      std::vector<noisycre::SweepRow> rows;
      for (const auto& d : run_dirs) {
        const auto result = tagged("read", [&] { return load_run(d); });
        if (run_dirs.size() == 1) {
          const fs::path dir = out.empty() ? fs::path(d) : resolve_out(out, "");
          tagged("write", [&] { noisycre::emit_report(result, dir, {!no_plots}); });
          std::ifstream summary(dir / "summary.txt");
          std::cout << summary.rdbuf();
        }
        add_to_rows(rows, result.report);
      }
      if (run_dirs.size() > 1) {
        const fs::path dir = resolve_out(out, "report");
        tagged("write", [&] { noisycre::emit_sweep(rows, dir, !no_plots); });
        std::cout << noisycre::sweep_table(rows);
      }
    } else if (*defaults) {
      const std::string text = noisycre::config_to_json(RunConfig{}).dump(2);
      if (out.empty()) {
        std::cout << text << '\n';
      } else {
        tagged("write", [&] { noisycre::save_config(RunConfig{}, out); });
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "noisycre: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
