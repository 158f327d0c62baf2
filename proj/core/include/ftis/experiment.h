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

#ifndef FTIS_EXPERIMENT_H_
#define FTIS_EXPERIMENT_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ftis/grpo.h"
#include "ftis/policy.h"
#include "ftis/swarm.h"
#include "ftis/task.h"

namespace ftis::experiment {

// Which instances the supervised warm start sees.
enum class WarmupCorpus { kAll, kTrain, kPlusOnly, kTimesOnly };

struct WarmupSpec {
  std::size_t steps = 0;
  std::size_t batch_size = 32;
  double learning_rate = 0.5;
  task::ThinkStyle style = task::ThinkStyle::kEmpty;
  double answer_noise = 0.0;
  double format_noise = 0.0;
  WarmupCorpus corpus = WarmupCorpus::kAll;

  friend bool operator==(const WarmupSpec&, const WarmupSpec&) = default;
};

struct NodeSpec {
  std::string name;
  std::size_t hidden_dim = 16;
  std::size_t embed_dim = 8;
  std::size_t context_window = 8;
  std::size_t adapter_rank = 0;
  std::vector<policy::Block> frozen;
  // Falls back to RunConfig::variant when unset.
  std::optional<grpo::Variant> variant;
  WarmupSpec warmup;

  friend bool operator==(const NodeSpec&, const NodeSpec&) = default;
};

struct RunConfig {
  std::string name = "run";
  std::size_t iterations = 50;
  std::size_t batch_size = 16;
  std::size_t group_size = 12;
  double learning_rate = 1e-2;
  double epsilon = 0.2;
  double cap = 2.0;
  double kl_threshold = 50.0;
  grpo::Variant variant = grpo::Variant::kFTIS;
  bool detach_truncation = true;
  bool renormalize_filtered = false;
  swarm::Topology topology = swarm::Topology::kVertical;
  std::vector<NodeSpec> nodes;
  // Every random stream of the run (initialization, warm start, generation,
  // batching) is derived from this value.
  std::uint64_t seed = 0;
  std::size_t validation_cadence = 10;
  std::size_t validation_size = 0;
  std::size_t max_len = 16;
  double temperature = 1.0;
  std::size_t inner_epochs = 1;
  bool parallel = true;
  task::TaskConfig task;
  std::string output_dir = "runs/run";

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Throws ConfigError naming the offending field.
void validate(const RunConfig& config);

// JSON text in both directions. Parsing rejects unknown keys and reports
// the dotted path of the first bad field. A run manifest is accepted too,
// in which case its embedded config is used.
RunConfig parse_config(std::string_view json_text);
std::string to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

std::vector<std::string> preset_names();
// Throws ConfigError for unknown names.
RunConfig preset(std::string_view name, std::uint64_t seed = 0);

// `key=v1,v2,...` over a config field. Every expanded run keeps the base
// seed, so runs differ only in the swept field. Output directories get a
// `key=value` suffix.
std::vector<RunConfig> expand_sweep(const RunConfig& base,
                                    std::string_view sweep);

// Memoizes warm-started parameters across runs of one process.
class WarmStartCache {
 public:
  policy::PolicyParams get_or_build(const std::string& key,
                                    const std::function<policy::PolicyParams()>& build);

 private:
  std::mutex mu_;
  std::map<std::string, policy::PolicyParams> entries_;
};

// Initializes and warm-starts every node. Per-node seeds depend on the run
// seed and the node name, so a node keeps its initial weights when it is
// moved between solo and paired runs.
std::vector<swarm::Node> build_nodes(const RunConfig& config,
                                     WarmStartCache* cache = nullptr);

swarm::TrainingConfig training_config(const RunConfig& config);

struct NodeFinal {
  std::string name;
  std::string variant;
  double initial_pass_at_1 = 0.0;
  double final_pass_at_1 = 0.0;
  double final_mean_reward = 0.0;
};

struct RunResult {
  swarm::MetricsLog log;
  std::vector<NodeFinal> finals;
};

RunResult execute(const RunConfig& config, WarmStartCache* cache = nullptr);

// Column order of metrics.csv. Part of the output contract.
inline constexpr std::string_view kMetricsColumns =
    "iteration,node,node_name,variant,loss,mean_reward,pass_at_1,kl_mean,"
    "kl_max,filtered_fraction,truncated_fraction,clipped_fraction,"
    "bytes_sent,bytes_received";

std::string metrics_csv(const RunConfig& config, const swarm::MetricsLog& log);
std::string manifest_json(const RunConfig& config);
std::string final_json(const RunConfig& config, const RunResult& result);

// execute() followed by writing metrics.csv, manifest.json and final.json
// into config.output_dir.
RunResult run(const RunConfig& config, WarmStartCache* cache = nullptr);

struct ComparisonRow {
  std::size_t iteration = 0;
  std::string node_name;
  // One entry per run directory; empty when the node is absent there.
  std::vector<std::optional<double>> pass_at_1;
  // pass_at_1[k] - pass_at_1[0].
  std::vector<std::optional<double>> delta;
};

struct Comparison {
  std::vector<std::string> runs;
  std::vector<ComparisonRow> rows;
};

// Aligns the validation curves of completed runs by iteration and node name.
// Throws InputError for a missing directory or metrics file and for
// mismatched validation grids.
Comparison compare(std::span<const std::filesystem::path> run_dirs);
std::string to_text(const Comparison& comparison);
std::string to_csv(const Comparison& comparison);

}  // namespace ftis::experiment

#endif  // FTIS_EXPERIMENT_H_
