// Copyright 2026 The ftis Authors
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

// Command-line front end: run experiments from config files or presets and
// compare finished runs.
//
//   ftis run <config.json> [--sweep key=v1,v2] [--out DIR]
//   ftis run --preset hetero-ftis [--seed N] [--sweep g=5,10,50,100]
//   ftis compare runs/a runs/b [--csv table.csv]
//   ftis presets [--show NAME]

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ftis/errors.h"
#include "ftis/experiment.h"

namespace {

namespace fs = std::filesystem;
using ftis::experiment::RunConfig;

enum ExitCode { kOk = 0, kFailure = 1, kBadConfig = 2, kNumeric = 3 };

void print_summary(const RunConfig& config,
                   const ftis::experiment::RunResult& result) {
  std::printf("%s (seed %llu) -> %s\n", config.name.c_str(),
              static_cast<unsigned long long>(config.seed),
              config.output_dir.c_str());
  for (const auto& f : result.finals) {
    std::printf("  %-10s %-6s pass@1 %.3f -> %.3f\n", f.name.c_str(),
                f.variant.c_str(), f.initial_pass_at_1, f.final_pass_at_1);
  }
}

int run_command(const std::string& config_path, const std::string& preset,
                std::optional<std::uint64_t> seed, const std::string& sweep,
                const std::string& out_dir) {
  RunConfig base;
  if (!preset.empty()) {
    if (!config_path.empty()) {
      throw ftis::ConfigError("give either a config file or --preset, not both");
    }
    base = ftis::experiment::preset(preset, seed.value_or(0));
  } else {
    if (config_path.empty()) {
      throw ftis::ConfigError("run needs a config file or --preset NAME");
    }
    base = ftis::experiment::load_config(config_path);
    if (seed) base.seed = *seed;
  }
  if (!out_dir.empty()) base.output_dir = out_dir;

  std::vector<RunConfig> runs = {base};
  if (!sweep.empty()) runs = ftis::experiment::expand_sweep(base, sweep);
  ftis::experiment::WarmStartCache cache;
  for (const RunConfig& config : runs) {
    print_summary(config, ftis::experiment::run(config, &cache));
  }
  return kOk;
}

int compare_command(const std::vector<std::string>& dirs,
                    const std::string& csv_path) {
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  const auto table = ftis::experiment::compare(paths);
  std::cout << ftis::experiment::to_text(table);
  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw ftis::InputError("cannot write " + csv_path);
    out << ftis::experiment::to_csv(table);
  }
  return kOk;
}

int presets_command(const std::string& show) {
  if (!show.empty()) {
    std::cout << ftis::experiment::to_json(ftis::experiment::preset(show));
    return kOk;
  }
  for (const auto& name : ftis::experiment::preset_names()) {
    std::cout << name << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous-swarm GRPO experiments on a toy arithmetic task"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run one experiment or a sweep");
  std::string config_path, preset, sweep, out_dir;
  std::uint64_t seed_value = 0;
  run->add_option("config", config_path, "Config file (JSON) or a run manifest");
  run->add_option("--preset", preset, "Named preset instead of a config file");
  auto* seed_opt = run->add_option("--seed", seed_value, "Run seed");
  run->add_option("--sweep", sweep, "key=v1,v2,... over one config field");
  run->add_option("--out", out_dir, "Output directory (overrides the config)");

  auto* cmp = app.add_subcommand("compare", "Align validation curves of runs");
  std::vector<std::string> dirs;
  std::string csv_path;
  cmp->add_option("dirs", dirs, "Run directories")->required()->expected(2, -1);
  cmp->add_option("--csv", csv_path, "Also write the table as CSV");

  auto* list = app.add_subcommand("presets", "List presets");
  std::string show;
  list->add_option("--show", show, "Print the full config of one preset");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      std::optional<std::uint64_t> seed;
      if (seed_opt->count() > 0) seed = seed_value;
      return run_command(config_path, preset, seed, sweep, out_dir);
    }
    if (*cmp) return compare_command(dirs, csv_path);
    if (*list) return presets_command(show);
  } catch (const ftis::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kBadConfig;
  } catch (const ftis::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
