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

#include "ftis/swarm.h"

#include <algorithm>
#include <future>
#include <numeric>
#include <set>
#include <string>
#include <utility>

#include "ftis/errors.h"
#include "ftis/random.h"

namespace ftis::swarm {
namespace {

constexpr std::uint64_t kBatchStream = 0xba7c4;
constexpr std::uint64_t kValidationStream = 0x7a11d;

void check_plan_inputs(std::span<const PromptId> prompt_ids,
                       std::span<const NodeId> node_ids,
                       std::size_t group_size) {
  if (group_size < 2) throw ConfigError("group size must be at least 2");
  if (group_size > 0x10000) {
    throw ConfigError("group size does not fit the 16-bit slot index");
  }
  if (prompt_ids.empty()) throw ConfigError("plan needs at least one prompt");
  if (node_ids.empty()) throw ConfigError("plan needs at least one node");
  if (std::set<NodeId>(node_ids.begin(), node_ids.end()).size() !=
      node_ids.size()) {
    throw ConfigError("node ids must be unique");
  }
  if (std::set<PromptId>(prompt_ids.begin(), prompt_ids.end()).size() !=
      prompt_ids.size()) {
    throw ConfigError("prompt ids in one round must be unique");
  }
}

// Runs fn(i) for every node, concurrently when requested. Exceptions
// surface from the lowest failing index.
template <typename Fn>
void for_each_node(std::size_t count, bool parallel, Fn&& fn) {
  if (!parallel || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> jobs;
  jobs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    jobs.push_back(std::async(std::launch::async, [&fn, i] { fn(i); }));
  }
  for (auto& job : jobs) job.wait();
  for (auto& job : jobs) job.get();
}

template <typename Fn>
auto with_node_context(NodeId node, Fn&& fn) {
  const std::string prefix = "node " + std::to_string(node) + ": ";
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const ProtocolError& e) {
    throw ProtocolError(prefix + e.what());
  } catch (const InputError& e) {
    throw InputError(prefix + e.what());
  }
}

}  // namespace

std::string_view to_string(Topology t) {
  return t == Topology::kVertical ? "vertical" : "horizontal";
}

Topology parse_topology(std::string_view name) {
  if (name == "vertical") return Topology::kVertical;
  if (name == "horizontal") return Topology::kHorizontal;
  throw ConfigError("unknown topology '" + std::string(name) +
                    "' (expected vertical or horizontal)");
}

RoundPlan plan_vertical(std::span<const PromptId> prompt_ids,
                        std::span<const NodeId> node_ids,
                        std::size_t group_size) {
  check_plan_inputs(prompt_ids, node_ids, group_size);
  RoundPlan plan;
  plan.topology = Topology::kVertical;
  plan.group_size = group_size;
  plan.nodes.assign(node_ids.begin(), node_ids.end());
  for (std::size_t p = 0; p < prompt_ids.size(); ++p) {
    plan.assignments[prompt_ids[p]][node_ids[p % node_ids.size()]] = group_size;
  }
  return plan;
}

RoundPlan plan_horizontal(std::span<const PromptId> prompt_ids,
                          std::span<const NodeId> node_ids,
                          std::size_t group_size) {
  check_plan_inputs(prompt_ids, node_ids, group_size);
  if (group_size % node_ids.size() != 0) {
    throw ConfigError("horizontal topology needs the group size (" +
                      std::to_string(group_size) +
                      ") to be divisible by the node count (" +
                      std::to_string(node_ids.size()) + ")");
  }
  RoundPlan plan;
  plan.topology = Topology::kHorizontal;
  plan.group_size = group_size;
  plan.nodes.assign(node_ids.begin(), node_ids.end());
  const std::size_t share = group_size / node_ids.size();
  for (PromptId p : prompt_ids) {
    for (NodeId n : node_ids) plan.assignments[p][n] = share;
  }
  return plan;
}

std::vector<NodeId> slot_owners(const RoundPlan& plan, PromptId prompt_id) {
  const auto it = plan.assignments.find(prompt_id);
  if (it == plan.assignments.end()) {
    throw ProtocolError("prompt " + std::to_string(prompt_id) +
                        " is not part of the round plan");
  }
  std::vector<NodeId> owners;
  owners.reserve(plan.group_size);
  for (NodeId n : plan.nodes) {
    const auto count = it->second.find(n);
    if (count == it->second.end()) continue;
    owners.insert(owners.end(), count->second, n);
  }
  return owners;
}

std::vector<grpo::Group> assemble_groups(
    const RoundPlan& plan, std::span<const wire::DecodedMessage> received,
    std::span<const task::TaskInstance> prompts,
    const policy::PolicyParams& trainer, std::optional<NodeId> self) {
  std::map<PromptId, const task::TaskInstance*> by_id;
  for (const task::TaskInstance& inst : prompts) by_id[inst.id] = &inst;

  // Slot table per prompt, filled from the received messages.
  std::map<PromptId, std::vector<const wire::DecodedMessage*>> slots;
  std::map<PromptId, std::vector<NodeId>> owners;
  for (const auto& [prompt_id, unused] : plan.assignments) {
    owners[prompt_id] = slot_owners(plan, prompt_id);
    slots[prompt_id].assign(plan.group_size, nullptr);
  }
  for (const wire::DecodedMessage& msg : received) {
    const PromptId pid = msg.completion.prompt_id;
    const NodeId nid = msg.completion.origin_node;
    const auto table = slots.find(pid);
    const std::string where = "(prompt " + std::to_string(pid) + ", node " +
                              std::to_string(nid) + ")";
    if (table == slots.end()) {
      throw ProtocolError("completion for unplanned prompt " + where);
    }
    if (msg.slot_index >= plan.group_size ||
        owners[pid][msg.slot_index] != nid) {
      throw ProtocolError("unexpected slot " + std::to_string(msg.slot_index) +
                          " " + where);
    }
    if (table->second[msg.slot_index] != nullptr) {
      throw ProtocolError("duplicate slot " + std::to_string(msg.slot_index) +
                          " " + where);
    }
    table->second[msg.slot_index] = &msg;
  }

  std::vector<grpo::Group> groups;
  groups.reserve(slots.size());
  for (const auto& [pid, table] : slots) {
    const auto inst = by_id.find(pid);
    if (inst == by_id.end()) {
      throw ProtocolError("no task instance for prompt " + std::to_string(pid));
    }
    // Order by (origin node, slot).
    std::vector<std::size_t> order(table.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t s = 0; s < table.size(); ++s) {
      if (table[s] == nullptr) {
        throw ProtocolError("missing slot " + std::to_string(s) + " (prompt " +
                            std::to_string(pid) + ", node " +
                            std::to_string(owners[pid][s]) + ")");
      }
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return table[a]->completion.origin_node < table[b]->completion.origin_node;
    });

    grpo::Group group;
    group.prompt_id = pid;
    group.prompt = inst->second->prompt();
    for (std::size_t s : order) {
      const Completion& c = table[s]->completion;
      group.completions.push_back(c);
      group.rewards.push_back(task::score(*inst->second, c.tokens));
      std::vector<double> snapshot =
          self && c.origin_node == *self
              ? std::vector<double>(c.gen_logprobs.begin(), c.gen_logprobs.end())
              : policy::token_logprobs(trainer, group.prompt, c.tokens);
      group.seq_kls.push_back(grpo::sequence_kl_estimate(snapshot, c.gen_logprobs));
      group.snapshot_logprobs.push_back(std::move(snapshot));
    }
    group.advantages = grpo::group_advantages(group.rewards);
    groups.push_back(std::move(group));
  }
  return groups;
}

void MessageQueue::push(NodeId node, PromptId prompt, std::uint16_t slot,
                        std::vector<std::uint8_t> bytes) {
  std::lock_guard<std::mutex> lock(mu_);
  const auto [it, inserted] =
      pending_.emplace(Key{node, prompt, slot}, std::move(bytes));
  if (!inserted) {
    throw ProtocolError("duplicate message (prompt " + std::to_string(prompt) +
                        ", node " + std::to_string(node) + ")");
  }
}

std::vector<std::vector<std::uint8_t>> MessageQueue::drain() {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(pending_.size());
  for (auto& [key, bytes] : pending_) out.push_back(std::move(bytes));
  pending_.clear();
  return out;
}

std::vector<RoundMetrics> run_round(std::vector<Node>& nodes,
                                    std::span<const task::TaskInstance> prompts,
                                    const RoundPlan& plan,
                                    const RoundConfig& config,
                                    std::uint64_t round_index) {
  if (nodes.empty()) throw ConfigError("run_round: no nodes");
  if (config.inner_epochs < 1) throw ConfigError("inner_epochs must be >= 1");
  std::map<PromptId, const task::TaskInstance*> by_id;
  for (const task::TaskInstance& inst : prompts) by_id[inst.id] = &inst;

  std::vector<RoundMetrics> metrics(nodes.size());
  std::vector<double> reward_sums(nodes.size(), 0.0);
  MessageQueue queue;

  // Generation phase.
  for_each_node(nodes.size(), config.parallel, [&](std::size_t ni) {
    const Node& node = nodes[ni];
    RoundMetrics& m = metrics[ni];
    m.node = node.id;
    with_node_context(node.id, [&] {
      for (const auto& [pid, counts] : plan.assignments) {
        if (!counts.contains(node.id)) continue;
        const auto inst = by_id.find(pid);
        if (inst == by_id.end()) {
          throw ProtocolError("no task instance for prompt " + std::to_string(pid));
        }
        const TokenSeq prompt = inst->second->prompt();
        const std::vector<NodeId> owners = slot_owners(plan, pid);
        for (std::size_t slot = 0; slot < owners.size(); ++slot) {
          if (owners[slot] != node.id) continue;
          const std::uint64_t seed =
              derive_seed({config.seed, round_index, node.id, pid, slot});
          Completion c = policy::sample_completion(
              node.policy, prompt, config.max_len, seed, config.temperature);
          c.prompt_id = pid;
          c.origin_node = node.id;
          c.origin_policy_tag = node.name;
          reward_sums[ni] += task::score(*inst->second, c.tokens);
          ++m.completions_generated;
          std::vector<std::uint8_t> bytes =
              wire::encode(c, static_cast<std::uint16_t>(slot));
          m.bytes_sent += bytes.size();
          queue.push(node.id, pid, static_cast<std::uint16_t>(slot),
                     std::move(bytes));
        }
      }
    });
  });

  // Simulated all-gather: every node decodes every message.
  const std::vector<std::vector<std::uint8_t>> wire_messages = queue.drain();
  std::vector<wire::DecodedMessage> delivered;
  delivered.reserve(wire_messages.size());
  for (const auto& bytes : wire_messages) delivered.push_back(wire::decode(bytes));
  std::uint64_t total_bytes = 0;
  for (const auto& bytes : wire_messages) total_bytes += bytes.size();

  // Training phase.
  for_each_node(nodes.size(), config.parallel, [&](std::size_t ni) {
    Node& node = nodes[ni];
    RoundMetrics& m = metrics[ni];
    m.bytes_received = total_bytes - m.bytes_sent;
    if (m.completions_generated > 0) {
      m.mean_reward = reward_sums[ni] / static_cast<double>(m.completions_generated);
    }
    with_node_context(node.id, [&] {
      const std::vector<grpo::Group> groups =
          assemble_groups(plan, delivered, prompts, node.policy,
                          config.temperature == 1.0
                              ? std::optional<NodeId>(node.id)
                              : std::nullopt);
      const std::size_t flat = policy::layout_of(node.policy.spec).total_count();
      std::vector<double> gradient(flat);
      policy::PolicyParams current = node.policy;
      for (std::size_t epoch = 0; epoch < config.inner_epochs; ++epoch) {
        grpo::BatchLoss loss =
            epoch == 0
                ? grpo::batch_loss(node.variant, groups)
                : grpo::batch_loss(node.variant, groups,
                                   [&](std::size_t g, std::size_t i) {
                                     return policy::token_logprobs(
                                         current, groups[g].prompt,
                                         groups[g].completions[i].tokens);
                                   });
        if (epoch == 0) {
          m.loss = loss.loss;
          m.kl_mean = loss.summary.mean_kl;
          m.kl_max = loss.summary.max_kl;
          m.filtered_fraction = loss.summary.filtered_fraction;
          m.truncated_fraction = loss.summary.truncated_fraction;
          m.clipped_fraction = loss.summary.clipped_fraction;
        }
        std::fill(gradient.begin(), gradient.end(), 0.0);
        for (std::size_t g = 0; g < groups.size(); ++g) {
          for (std::size_t i = 0; i < groups[g].completions.size(); ++i) {
            policy::accumulate_gradient(current, groups[g].prompt,
                                        groups[g].completions[i].tokens,
                                        loss.token_coefficients[g][i], gradient);
          }
        }
        policy::mask_gradient(current, gradient);
        policy::apply_update_in_place(current, gradient, config.learning_rate);
      }
      node.policy = std::move(current);
    });
  });
  return metrics;
}

std::vector<task::TaskInstance> validation_set(const task::TaskConfig& task,
                                               std::size_t size) {
  std::vector<task::TaskInstance> all =
      task::instances(task, task::Split::kValidation);
  if (size == 0 || size >= all.size()) return all;
  Rng rng(kValidationStream);
  for (std::size_t i = all.size(); i > 1; --i) {
    std::swap(all[i - 1], all[rng.below(i)]);
  }
  all.resize(size);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  return all;
}

std::vector<task::TaskInstance> training_batch(
    std::span<const task::TaskInstance> train, std::size_t batch_size,
    std::uint64_t seed, std::size_t iteration) {
  if (batch_size == 0 || batch_size > train.size()) {
    throw ConfigError("batch size " + std::to_string(batch_size) +
                      " must be in [1, " + std::to_string(train.size()) + "]");
  }
  std::vector<task::TaskInstance> pool(train.begin(), train.end());
  Rng rng(derive_seed({seed, kBatchStream, iteration}));
  // Partial Fisher-Yates: the first batch_size entries are the sample.
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  }
  pool.resize(batch_size);
  return pool;
}

MetricsLog run_training(std::vector<Node>& nodes, const TrainingConfig& config,
                        const IterationCallback& on_record) {
  if (nodes.empty()) throw ConfigError("run_training: no nodes");
  if (config.validation_cadence == 0) {
    throw ConfigError("validation cadence must be positive");
  }
  for (const Node& node : nodes) grpo::validate(node.variant);
  const std::vector<task::TaskInstance> train =
      task::instances(config.task, task::Split::kTrain);
  const std::vector<task::TaskInstance> validation =
      validation_set(config.task, config.validation_size);
  std::vector<NodeId> node_ids;
  for (const Node& node : nodes) node_ids.push_back(node.id);

  MetricsLog log;
  const auto emit = [&](IterationRecord record) {
    if (on_record) on_record(record);
    log.records.push_back(std::move(record));
  };
  const auto validate_nodes = [&](std::vector<std::optional<double>>& out) {
    for_each_node(nodes.size(), config.round.parallel, [&](std::size_t ni) {
      out[ni] = task::pass_at_1(nodes[ni].policy, validation,
                                config.round.max_len);
    });
  };

  std::vector<std::optional<double>> scores(nodes.size());
  validate_nodes(scores);
  for (std::size_t ni = 0; ni < nodes.size(); ++ni) {
    emit({0, nodes[ni].id, nodes[ni].name, std::nullopt, scores[ni]});
  }

  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const std::vector<task::TaskInstance> batch =
        training_batch(train, config.batch_size, config.round.seed, it);
    std::vector<PromptId> prompt_ids;
    for (const auto& inst : batch) prompt_ids.push_back(inst.id);
    const RoundPlan plan =
        config.topology == Topology::kVertical
            ? plan_vertical(prompt_ids, node_ids, config.group_size)
            : plan_horizontal(prompt_ids, node_ids, config.group_size);
    std::vector<RoundMetrics> round;
    try {
      round = run_round(nodes, batch, plan, config.round, it);
    } catch (const NumericError& e) {
      throw NumericError("iteration " + std::to_string(it) + ": " + e.what());
    }

    std::fill(scores.begin(), scores.end(), std::nullopt);
    if (it % config.validation_cadence == 0 || it == config.iterations) {
      validate_nodes(scores);
    }
    for (std::size_t ni = 0; ni < nodes.size(); ++ni) {
      emit({it, nodes[ni].id, nodes[ni].name, round[ni], scores[ni]});
    }
  }
  return log;
}

}  // namespace ftis::swarm
