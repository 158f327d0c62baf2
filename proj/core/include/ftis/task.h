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

#ifndef FTIS_TASK_H_
#define FTIS_TASK_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ftis/policy.h"
#include "ftis/types.h"

namespace ftis::task {

// Vocabulary of the modular-arithmetic task. Digits occupy ids 0-9 and the
// end-of-sequence marker is the last id, as the policy engine expects.
enum : Token {
  kPlus = 10,
  kTimes = 11,
  kThinkOpen = 12,
  kThinkClose = 13,
  kAnswerOpen = 14,
  kAnswerClose = 15,
  kEos = 16,
};
inline constexpr std::size_t kVocabSize = 17;

bool is_structural(Token t);
std::string token_name(Token t);

enum class Split { kTrain, kValidation };

enum class Operation { kPlus, kTimes };

struct TaskInstance {
  PromptId id = 0;
  Token lhs = 0;
  Operation op = Operation::kPlus;
  Token rhs = 0;
  Token answer = 0;
  Split split = Split::kTrain;

  TokenSeq prompt() const;

  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

struct TaskConfig {
  bool allow_plus = true;
  bool allow_times = true;
  // Percentage of the operand/operation space held out for validation.
  std::uint32_t validation_percent = 25;
  std::size_t max_len = 16;

  friend bool operator==(const TaskConfig&, const TaskConfig&) = default;
};

// Builds the instance for d1 op d2. Ids are stable: d1*20 + op*10 + d2.
TaskInstance make_instance(Token lhs, Operation op, Token rhs,
                           const TaskConfig& config = {});

// Split membership depends only on (d1, op, d2), never on a seed.
Split split_of(Token lhs, Operation op, Token rhs,
               std::uint32_t validation_percent);

// Uniform over the allowed operand/operation space.
TaskInstance sample_instance(const TaskConfig& config, std::uint64_t rng_seed);

// Every allowed instance of one split, in id order.
std::vector<TaskInstance> instances(const TaskConfig& config, Split split);

// 1 iff tokens read THINK_OPEN, non-structural tokens, THINK_CLOSE,
// ANS_OPEN, the answer digit, ANS_CLOSE and then EOS or the end.
double score(const TaskInstance& instance, std::span<const Token> completion);

// Fraction of instances solved by greedy decoding.
double pass_at_1(const policy::PolicyParams& policy,
                 std::span<const TaskInstance> validation,
                 std::size_t max_len);

// Reasoning content placed between the think markers of a demonstration.
enum class ThinkStyle {
  kEmpty,    // nothing
  kRestate,  // d1 op d2
  kOperands, // d1 d2
};

TokenSeq demonstration(const TaskInstance& instance, ThinkStyle style);

// Short supervised warm start on demonstrations.
struct WarmupConfig {
  std::size_t steps = 0;
  std::size_t batch_size = 32;
  double learning_rate = 0.5;
  ThinkStyle style = ThinkStyle::kEmpty;
  // Probability that a demonstration carries a random answer digit.
  double answer_noise = 0.0;
  // Probability that a demonstration skips the think block entirely, which
  // the reward rejects.
  double format_noise = 0.0;
  std::uint64_t seed = 0;
};

void warm_start(policy::PolicyParams& params,
                std::span<const TaskInstance> corpus,
                const WarmupConfig& config);

}  // namespace ftis::task

#endif  // FTIS_TASK_H_
