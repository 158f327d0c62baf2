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

#include <map>
#include <set>
#include <vector>

#include "ftis/errors.h"
#include "ftis/random.h"
#include "ftis/wire_format.h"
#include "gtest/gtest.h"

namespace {

using ::ftis::Completion;
using ::ftis::NodeId;
using ::ftis::PromptId;
namespace grpo = ::ftis::grpo;
namespace policy = ::ftis::policy;
namespace swarm = ::ftis::swarm;
namespace task = ::ftis::task;
namespace wire = ::ftis::wire;

policy::PolicyParams small_policy(std::uint64_t seed, std::size_t window = 4) {
  policy::PolicySpec s;
  s.vocab_size = task::kVocabSize;
  s.context_window = window;
  s.embed_dim = 4;
  s.hidden_dim = 8;
  s.init_seed = seed;
  return policy::init_policy(policy::with_full_mask(s));
}

std::vector<task::TaskInstance> first_prompts(std::size_t n) {
  auto all = task::instances({}, task::Split::kTrain);
  all.resize(n);
  return all;
}

std::vector<PromptId> ids_of(const std::vector<task::TaskInstance>& prompts) {
  std::vector<PromptId> ids;
  for (const auto& p : prompts) ids.push_back(p.id);
  return ids;
}

TEST(PlanTest, VerticalDealsPromptsRoundRobin) {
  const std::vector<PromptId> prompts = {5, 9, 2, 40, 41};
  const std::vector<NodeId> nodes = {7, 3};
  const auto plan = swarm::plan_vertical(prompts, nodes, 4);
  EXPECT_EQ(plan.topology, swarm::Topology::kVertical);
  ASSERT_EQ(plan.assignments.size(), 5u);
  const NodeId expected[] = {7, 3, 7, 3, 7};
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& counts = plan.assignments.at(prompts[i]);
    ASSERT_EQ(counts.size(), 1u);
    EXPECT_EQ(counts.begin()->first, expected[i]);
    EXPECT_EQ(counts.begin()->second, 4u);
    EXPECT_EQ(swarm::slot_owners(plan, prompts[i]),
              std::vector<NodeId>(4, expected[i]));
  }
}

TEST(PlanTest, HorizontalSplitsEveryGroupEvenly) {
  const std::vector<PromptId> prompts = {1, 2, 3};
  const std::vector<NodeId> nodes = {4, 0, 9};
  const auto plan = swarm::plan_horizontal(prompts, nodes, 6);
  for (PromptId p : prompts) {
    EXPECT_EQ(swarm::slot_owners(plan, p), (std::vector<NodeId>{4, 4, 0, 0, 9, 9}));
  }
}

TEST(PlanTest, RejectsBadShapes) {
  const std::vector<PromptId> prompts = {1, 2};
  const std::vector<NodeId> two = {0, 1};
  const std::vector<NodeId> three = {0, 1, 2};
  EXPECT_THROW(swarm::plan_horizontal(prompts, three, 4), ftis::ConfigError);
  EXPECT_THROW(swarm::plan_vertical(prompts, two, 1), ftis::ConfigError);
  EXPECT_THROW(swarm::plan_vertical(prompts, std::vector<NodeId>{1, 1}, 4),
               ftis::ConfigError);
  EXPECT_THROW(swarm::plan_vertical(std::vector<PromptId>{3, 3}, two, 4),
               ftis::ConfigError);
  EXPECT_THROW(swarm::plan_vertical(std::vector<PromptId>{}, two, 4),
               ftis::ConfigError);
  EXPECT_THROW(swarm::plan_vertical(prompts, std::vector<NodeId>{}, 4),
               ftis::ConfigError);
  const auto plan = swarm::plan_vertical(prompts, two, 4);
  EXPECT_THROW(swarm::slot_owners(plan, 99), ftis::ProtocolError);
}

TEST(TopologyTest, NamesRoundTrip) {
  for (auto t : {swarm::Topology::kVertical, swarm::Topology::kHorizontal}) {
    EXPECT_EQ(swarm::parse_topology(swarm::to_string(t)), t);
  }
  EXPECT_THROW(swarm::parse_topology("diagonal"), ftis::ConfigError);
}

// Messages produced the way run_round produces them, without training.
std::vector<wire::DecodedMessage> generate(
    const swarm::RoundPlan& plan, const std::vector<task::TaskInstance>& prompts,
    const std::map<NodeId, policy::PolicyParams>& policies) {
  std::vector<wire::DecodedMessage> out;
  for (const auto& inst : prompts) {
    const auto owners = swarm::slot_owners(plan, inst.id);
    for (std::size_t slot = 0; slot < owners.size(); ++slot) {
      Completion c = policy::sample_completion(policies.at(owners[slot]),
                                               inst.prompt(), 12,
                                               inst.id * 100 + slot);
      c.prompt_id = inst.id;
      c.origin_node = owners[slot];
      out.push_back(wire::decode(wire::encode(c, static_cast<std::uint16_t>(slot))));
    }
  }
  return out;
}

TEST(AssembleTest, HorizontalGroupsPoolBothNodes) {
  const auto prompts = first_prompts(3);
  const std::map<NodeId, policy::PolicyParams> policies = {
      {0, small_policy(1)}, {1, small_policy(2, 6)}};
  const auto plan = swarm::plan_horizontal(ids_of(prompts), std::vector<NodeId>{0, 1}, 4);
  const auto messages = generate(plan, prompts, policies);
  const auto& trainer = policies.at(0);
  const auto groups = swarm::assemble_groups(plan, messages, prompts, trainer);
  ASSERT_EQ(groups.size(), 3u);
  for (const auto& g : groups) {
    grpo::validate(g);
    ASSERT_EQ(g.completions.size(), 4u);
    const auto inst = task::make_instance(g.prompt[0], g.prompt[1] == task::kPlus
                                                           ? task::Operation::kPlus
                                                           : task::Operation::kTimes,
                                          g.prompt[2]);
    std::multiset<NodeId> origins;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& c = g.completions[i];
      origins.insert(c.origin_node);
      EXPECT_EQ(g.rewards[i], task::score(inst, c.tokens));
      EXPECT_EQ(g.snapshot_logprobs[i],
                policy::token_logprobs(trainer, g.prompt, c.tokens));
      EXPECT_DOUBLE_EQ(g.seq_kls[i],
                       grpo::sequence_kl_estimate(g.snapshot_logprobs[i], c.gen_logprobs));
    }
    EXPECT_EQ(origins, (std::multiset<NodeId>{0, 0, 1, 1}));
    // Advantages are normalized over the pooled group.
    EXPECT_EQ(g.advantages, grpo::group_advantages(g.rewards));
  }
}

TEST(AssembleTest, OwnCompletionsReuseRecordedLogprobs) {
  const auto prompts = first_prompts(2);
  const std::map<NodeId, policy::PolicyParams> policies = {{0, small_policy(1)},
                                                           {1, small_policy(2)}};
  const auto plan = swarm::plan_vertical(ids_of(prompts), std::vector<NodeId>{0, 1}, 3);
  const auto messages = generate(plan, prompts, policies);
  const auto groups =
      swarm::assemble_groups(plan, messages, prompts, policies.at(0), NodeId{0});
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.completions.size(); ++i) {
      const auto& c = g.completions[i];
      if (c.origin_node == 0) {
        EXPECT_EQ(g.snapshot_logprobs[i],
                  std::vector<double>(c.gen_logprobs.begin(), c.gen_logprobs.end()));
        EXPECT_EQ(g.seq_kls[i], 0.0);
      } else {
        EXPECT_EQ(g.snapshot_logprobs[i],
                  policy::token_logprobs(policies.at(0), g.prompt, c.tokens));
      }
    }
  }
}

TEST(AssembleTest, ProtocolViolations) {
  const auto prompts = first_prompts(2);
  const std::map<NodeId, policy::PolicyParams> policies = {{0, small_policy(1)},
                                                           {1, small_policy(2)}};
  const auto plan = swarm::plan_vertical(ids_of(prompts), std::vector<NodeId>{0, 1}, 3);
  const auto good = generate(plan, prompts, policies);
  const auto& trainer = policies.at(0);
  ASSERT_NO_THROW(swarm::assemble_groups(plan, good, prompts, trainer));

  auto missing = good;
  missing.pop_back();
  EXPECT_THROW(swarm::assemble_groups(plan, missing, prompts, trainer),
               ftis::ProtocolError);

  auto duplicate = good;
  duplicate.push_back(good.front());
  EXPECT_THROW(swarm::assemble_groups(plan, duplicate, prompts, trainer),
               ftis::ProtocolError);

  auto wrong_owner = good;
  wrong_owner[0].completion.origin_node = 1 - wrong_owner[0].completion.origin_node;
  EXPECT_THROW(swarm::assemble_groups(plan, wrong_owner, prompts, trainer),
               ftis::ProtocolError);

  auto bad_slot = good;
  bad_slot[0].slot_index = 3;
  EXPECT_THROW(swarm::assemble_groups(plan, bad_slot, prompts, trainer),
               ftis::ProtocolError);

  auto unplanned = good;
  unplanned[0].completion.prompt_id = 199;
  EXPECT_THROW(swarm::assemble_groups(plan, unplanned, prompts, trainer),
               ftis::ProtocolError);

  EXPECT_THROW(swarm::assemble_groups(plan, good, first_prompts(1), trainer),
               ftis::ProtocolError);
}

TEST(MessageQueueTest, DrainsInKeyOrderAndRejectsDuplicates) {
  swarm::MessageQueue q;
  q.push(1, 5, 0, {1});
  q.push(0, 9, 1, {2});
  q.push(0, 9, 0, {3});
  EXPECT_THROW(q.push(1, 5, 0, {4}), ftis::ProtocolError);
  const auto out = q.drain();
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0], (std::vector<std::uint8_t>{3}));
  EXPECT_EQ(out[1], (std::vector<std::uint8_t>{2}));
  EXPECT_EQ(out[2], (std::vector<std::uint8_t>{1}));
  EXPECT_TRUE(q.drain().empty());
}

std::vector<swarm::Node> two_nodes(grpo::Variant variant) {
  std::vector<swarm::Node> nodes(2);
  for (NodeId i = 0; i < 2; ++i) {
    nodes[i].id = i;
    nodes[i].name = i == 0 ? "a" : "b";
    nodes[i].policy = small_policy(10 + i, 4 + 2 * i);
    nodes[i].variant.variant = variant;
  }
  return nodes;
}

TEST(RunRoundTest, ParallelMatchesSerial) {
  const auto prompts = first_prompts(4);
  for (auto topology : {swarm::Topology::kVertical, swarm::Topology::kHorizontal}) {
    const std::vector<NodeId> ids = {0, 1};
    const auto plan = topology == swarm::Topology::kVertical
                          ? swarm::plan_vertical(ids_of(prompts), ids, 4)
                          : swarm::plan_horizontal(ids_of(prompts), ids, 4);
    swarm::RoundConfig config;
    config.learning_rate = 0.3;
    config.seed = 8;
    config.inner_epochs = 2;
    auto serial = two_nodes(grpo::Variant::kFTIS);
    auto parallel = serial;
    config.parallel = false;
    const auto ms = swarm::run_round(serial, prompts, plan, config, 3);
    config.parallel = true;
    const auto mp = swarm::run_round(parallel, prompts, plan, config, 3);
    EXPECT_EQ(ms, mp);
    for (std::size_t n = 0; n < 2; ++n) {
      EXPECT_EQ(serial[n].policy, parallel[n].policy);
    }
  }
}

TEST(RunRoundTest, ByteAccounting) {
  const auto prompts = first_prompts(4);
  const auto plan = swarm::plan_vertical(ids_of(prompts), std::vector<NodeId>{0, 1}, 3);
  auto nodes = two_nodes(grpo::Variant::kNoIS);
  const auto metrics = swarm::run_round(nodes, prompts, plan, {}, 0);
  ASSERT_EQ(metrics.size(), 2u);
  for (const auto& m : metrics) {
    EXPECT_EQ(m.completions_generated, 6u);
    // Every message has a 16-byte header and 8 bytes per token.
    EXPECT_GE(m.bytes_sent, 6u * 16);
    EXPECT_EQ((m.bytes_sent - 6 * 16) % 8, 0u);
  }
  EXPECT_EQ(metrics[0].bytes_received, metrics[1].bytes_sent);
  EXPECT_EQ(metrics[1].bytes_received, metrics[0].bytes_sent);
}

TEST(RunRoundTest, SoloRoundIsVariantIndependent) {
  // A lone node at temperature 1 trains on its own samples, where every
  // variant reduces to the same update.
  const auto prompts = first_prompts(4);
  const auto plan = swarm::plan_vertical(ids_of(prompts), std::vector<NodeId>{0}, 4);
  swarm::RoundConfig config;
  config.learning_rate = 0.5;
  std::optional<policy::PolicyParams> reference;
  for (auto v : grpo::kAllVariants) {
    std::vector<swarm::Node> nodes(1);
    nodes[0].policy = small_policy(3);
    nodes[0].variant.variant = v;
    swarm::run_round(nodes, prompts, plan, config, 0);
    if (!reference) {
      reference = nodes[0].policy;
    } else {
      EXPECT_EQ(nodes[0].policy, *reference) << grpo::to_string(v);
    }
  }
}

TEST(TrainingTest, RecordsFollowTheValidationGrid) {
  auto nodes = two_nodes(grpo::Variant::kFTIS);
  swarm::TrainingConfig config;
  config.iterations = 5;
  config.batch_size = 4;
  config.group_size = 4;
  config.validation_cadence = 2;
  config.validation_size = 10;
  config.round.max_len = 8;
  std::vector<swarm::IterationRecord> seen;
  const auto log = swarm::run_training(nodes, config,
                                       [&](const auto& r) { seen.push_back(r); });
  EXPECT_EQ(seen, log.records);
  ASSERT_EQ(log.records.size(), 12u);  // (iterations + 1) x nodes
  for (const auto& r : log.records) {
    EXPECT_EQ(r.round.has_value(), r.iteration > 0);
    const bool validated = r.iteration % 2 == 0 || r.iteration == 5;
    EXPECT_EQ(r.pass_at_1.has_value(), validated) << r.iteration;
  }
}

TEST(TrainingTest, DeterministicForAFixedSeed) {
  swarm::TrainingConfig config;
  config.iterations = 3;
  config.batch_size = 4;
  config.group_size = 4;
  config.validation_size = 8;
  config.round.seed = 21;
  auto a = two_nodes(grpo::Variant::kFVIS);
  auto b = two_nodes(grpo::Variant::kFVIS);
  config.round.parallel = false;
  const auto la = swarm::run_training(a, config);
  config.round.parallel = true;
  const auto lb = swarm::run_training(b, config);
  EXPECT_EQ(la, lb);
  EXPECT_EQ(a[0].policy, b[0].policy);
}

TEST(TrainingTest, ValidationSetIgnoresSeeds) {
  const auto v = swarm::validation_set({}, 20);
  EXPECT_EQ(v.size(), 20u);
  EXPECT_EQ(v, swarm::validation_set({}, 20));
  for (const auto& inst : v) EXPECT_EQ(inst.split, task::Split::kValidation);
  EXPECT_EQ(swarm::validation_set({}, 0),
            task::instances({}, task::Split::kValidation));
}

TEST(TrainingTest, BatchesAreDrawnFromTheTrainSplit) {
  const auto train = task::instances({}, task::Split::kTrain);
  const auto b1 = swarm::training_batch(train, 8, 5, 1);
  EXPECT_EQ(b1, swarm::training_batch(train, 8, 5, 1));
  EXPECT_NE(b1, swarm::training_batch(train, 8, 5, 2));
  std::set<PromptId> ids;
  for (const auto& inst : b1) {
    EXPECT_EQ(inst.split, task::Split::kTrain);
    ids.insert(inst.id);
  }
  EXPECT_EQ(ids.size(), 8u);
  EXPECT_THROW(swarm::training_batch(train, train.size() + 1, 5, 1), ftis::ConfigError);
}

}  // namespace
