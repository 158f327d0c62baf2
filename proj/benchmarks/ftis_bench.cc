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

#include <benchmark/benchmark.h>

#include <vector>

#include "ftis/grpo.h"
#include "ftis/policy.h"
#include "ftis/swarm.h"
#include "ftis/task.h"
#include "ftis/wire_format.h"

namespace {

namespace policy = ::ftis::policy;
namespace swarm = ::ftis::swarm;
namespace task = ::ftis::task;
namespace wire = ::ftis::wire;

policy::PolicyParams make_policy(std::size_t hidden) {
  policy::PolicySpec s;
  s.vocab_size = task::kVocabSize;
  s.hidden_dim = hidden;
  return policy::init_policy(s);
}

void BM_TokenLogprobs(benchmark::State& state) {
  const auto p = make_policy(state.range(0));
  const ftis::TokenSeq prompt = {3, task::kPlus, 4};
  const ftis::TokenSeq completion = {12, 3, 10, 4, 13, 14, 7, 15, 16};
  for (auto _ : state) {
    benchmark::DoNotOptimize(policy::token_logprobs(p, prompt, completion));
  }
}
BENCHMARK(BM_TokenLogprobs)->Arg(16)->Arg(32);

void BM_Backward(benchmark::State& state) {
  const auto p = make_policy(state.range(0));
  const ftis::TokenSeq prompt = {3, task::kPlus, 4};
  const ftis::TokenSeq completion = {12, 3, 10, 4, 13, 14, 7, 15, 16};
  const std::vector<double> coeff(completion.size(), 0.1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(policy::backward(p, prompt, completion, coeff));
  }
}
BENCHMARK(BM_Backward)->Arg(16)->Arg(32);

ftis::Completion sample_completion(std::size_t n) {
  ftis::Completion c;
  c.origin_node = 1;
  c.prompt_id = 42;
  for (std::size_t i = 0; i < n; ++i) {
    c.tokens.push_back(static_cast<ftis::Token>(i % 17));
    c.gen_logprobs.push_back(-0.25f * static_cast<float>(i % 9));
  }
  return c;
}

void BM_Encode(benchmark::State& state) {
  const auto c = sample_completion(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(wire::encode(c, 3));
  state.SetBytesProcessed(state.iterations() * (16 + 8 * state.range(0)));
}
BENCHMARK(BM_Encode)->Arg(16)->Arg(256);

void BM_Decode(benchmark::State& state) {
  const auto bytes = wire::encode(sample_completion(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(wire::decode(bytes));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(bytes.size()));
}
BENCHMARK(BM_Decode)->Arg(16)->Arg(256);

void BM_RunRound(benchmark::State& state) {
  std::vector<swarm::Node> nodes(2);
  for (ftis::NodeId i = 0; i < 2; ++i) {
    nodes[i].id = i;
    nodes[i].policy = make_policy(16 * (i + 1));
  }
  const auto train = task::instances({}, task::Split::kTrain);
  const auto batch = swarm::training_batch(train, 16, 1, 1);
  std::vector<ftis::PromptId> ids;
  for (const auto& inst : batch) ids.push_back(inst.id);
  const auto plan = swarm::plan_vertical(ids, std::vector<ftis::NodeId>{0, 1}, 12);
  swarm::RoundConfig config;
  config.parallel = false;
  std::uint64_t round = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(swarm::run_round(nodes, batch, plan, config, ++round));
  }
}
BENCHMARK(BM_RunRound)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
