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

#ifndef FTIS_SWARM_H_
#define FTIS_SWARM_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "ftis/grpo.h"
#include "ftis/policy.h"
#include "ftis/task.h"
#include "ftis/types.h"
#include "ftis/wire_format.h"

namespace ftis::swarm {

// Vertical: one node generates a prompt's whole group.
// Horizontal: every node generates an equal slice of every group.
enum class Topology { kVertical, kHorizontal };

std::string_view to_string(Topology t);
Topology parse_topology(std::string_view name);

struct RoundPlan {
  Topology topology = Topology::kVertical;
  std::size_t group_size = 0;
  std::vector<NodeId> nodes;  // slot order within a group follows this order
  std::map<PromptId, std::map<NodeId, std::size_t>> assignments;
};

// Prompts are dealt round-robin over the nodes.
RoundPlan plan_vertical(std::span<const PromptId> prompt_ids,
                        std::span<const NodeId> node_ids,
                        std::size_t group_size);

// Requires group_size to be divisible by the node count.
RoundPlan plan_horizontal(std::span<const PromptId> prompt_ids,
                          std::span<const NodeId> node_ids,
                          std::size_t group_size);

// Owner of each slot of a prompt's group. Slots are contiguous per node, in
// plan node order.
std::vector<NodeId> slot_owners(const RoundPlan& plan, PromptId prompt_id);

// Builds one Group per planned prompt from the gathered messages. Rewards
// are recomputed from tokens; advantages use the pooled group; KL estimates
// and snapshot log-probs come from `trainer`. Completions whose origin is
// `self` were sampled from `trainer` itself at temperature 1, so their
// recorded log-probs are taken as the snapshot values.
std::vector<grpo::Group> assemble_groups(
    const RoundPlan& plan, std::span<const wire::DecodedMessage> received,
    std::span<const task::TaskInstance> prompts,
    const policy::PolicyParams& trainer,
    std::optional<NodeId> self = std::nullopt);

// Multi-producer byte queue; drain order is (node, prompt, slot).
class MessageQueue {
 public:
  void push(NodeId node, PromptId prompt, std::uint16_t slot,
            std::vector<std::uint8_t> bytes);
  std::vector<std::vector<std::uint8_t>> drain();

 private:
  using Key = std::tuple<NodeId, PromptId, std::uint16_t>;
  std::mutex mu_;
  std::map<Key, std::vector<std::uint8_t>> pending_;
};

struct Node {
  NodeId id = 0;
  std::string name;
  policy::PolicyParams policy;
  grpo::VariantConfig variant;
};

struct RoundConfig {
  std::size_t max_len = 16;
  double temperature = 1.0;
  double learning_rate = 1e-2;
  // Optimizer steps per generation phase, all against the same snapshot.
  std::size_t inner_epochs = 1;
  std::uint64_t seed = 0;
  bool parallel = true;
};

struct RoundMetrics {
  NodeId node = 0;
  double loss = 0.0;
  // Mean reward of the completions this node generated.
  double mean_reward = 0.0;
  double kl_mean = 0.0;
  double kl_max = 0.0;
  double filtered_fraction = 0.0;
  double truncated_fraction = 0.0;
  double clipped_fraction = 0.0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
  std::size_t completions_generated = 0;

  friend bool operator==(const RoundMetrics&, const RoundMetrics&) = default;
};

// Generate, exchange over the wire codec, assemble, and update every node
// once. `round_index` seeds generation.
std::vector<RoundMetrics> run_round(std::vector<Node>& nodes,
                                    std::span<const task::TaskInstance> prompts,
                                    const RoundPlan& plan,
                                    const RoundConfig& config,
                                    std::uint64_t round_index);

struct TrainingConfig {
  std::size_t iterations = 50;
  std::size_t batch_size = 16;
  std::size_t group_size = 12;
  Topology topology = Topology::kVertical;
  RoundConfig round;
  // Validation runs at iteration 0, every `validation_cadence` iterations
  // and after the last iteration.
  std::size_t validation_cadence = 10;
  // 0 means the whole validation split.
  std::size_t validation_size = 0;
  task::TaskConfig task;
};

struct IterationRecord {
  std::size_t iteration = 0;
  NodeId node = 0;
  std::string node_name;
  std::optional<RoundMetrics> round;  // absent for iteration 0
  std::optional<double> pass_at_1;

  friend bool operator==(const IterationRecord&,
                         const IterationRecord&) = default;
};

struct MetricsLog {
  std::vector<IterationRecord> records;

  friend bool operator==(const MetricsLog&, const MetricsLog&) = default;
};

// Validation instances used by run_training; identical for every seed.
std::vector<task::TaskInstance> validation_set(const task::TaskConfig& task,
                                               std::size_t size);

// Prompt batch of one iteration, shared by all nodes.
std::vector<task::TaskInstance> training_batch(
    std::span<const task::TaskInstance> train, std::size_t batch_size,
    std::uint64_t seed, std::size_t iteration);

using IterationCallback = std::function<void(const IterationRecord&)>;

MetricsLog run_training(std::vector<Node>& nodes, const TrainingConfig& config,
                        const IterationCallback& on_record = {});

}  // namespace ftis::swarm

#endif  // FTIS_SWARM_H_
