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

#include "ftis/task.h"

#include <cmath>

#include "ftis/errors.h"
#include "ftis/random.h"

namespace ftis::task {
namespace {

constexpr std::uint64_t kSplitSalt = 0x2545f4914f6cdd1dULL;

Token op_token(Operation op) { return op == Operation::kPlus ? kPlus : kTimes; }

std::vector<Operation> allowed_ops(const TaskConfig& config) {
  std::vector<Operation> ops;
  if (config.allow_plus) ops.push_back(Operation::kPlus);
  if (config.allow_times) ops.push_back(Operation::kTimes);
  if (ops.empty()) throw ConfigError("task: no operation is enabled");
  return ops;
}

}  // namespace

bool is_structural(Token t) {
  return t == kThinkOpen || t == kThinkClose || t == kAnswerOpen ||
         t == kAnswerClose || t == kEos;
}

std::string token_name(Token t) {
  switch (t) {
    case kPlus:
      return "+";
    case kTimes:
      return "*";
    case kThinkOpen:
      return "<think>";
    case kThinkClose:
      return "</think>";
    case kAnswerOpen:
      return "<answer>";
    case kAnswerClose:
      return "</answer>";
    case kEos:
      return "<eos>";
    default:
      return t < 10 ? std::string(1, static_cast<char>('0' + t))
                    : "<" + std::to_string(t) + ">";
  }
}

TokenSeq TaskInstance::prompt() const { return {lhs, op_token(op), rhs}; }

Split split_of(Token lhs, Operation op, Token rhs,
               std::uint32_t validation_percent) {
  const std::uint64_t key =
      lhs * 20u + (op == Operation::kTimes ? 10u : 0u) + rhs;
  return mix64(key ^ kSplitSalt) % 100 < validation_percent ? Split::kValidation
                                                            : Split::kTrain;
}

TaskInstance make_instance(Token lhs, Operation op, Token rhs,
                           const TaskConfig& config) {
  if (lhs > 9 || rhs > 9) throw InputError("task: operands must be digits");
  TaskInstance inst;
  inst.lhs = lhs;
  inst.op = op;
  inst.rhs = rhs;
  inst.id = lhs * 20u + (op == Operation::kTimes ? 10u : 0u) + rhs;
  inst.answer = op == Operation::kPlus ? (lhs + rhs) % 10 : (lhs * rhs) % 10;
  inst.split = split_of(lhs, op, rhs, config.validation_percent);
  return inst;
}

TaskInstance sample_instance(const TaskConfig& config, std::uint64_t rng_seed) {
  const std::vector<Operation> ops = allowed_ops(config);
  Rng rng(rng_seed);
  const auto lhs = static_cast<Token>(rng.below(10));
  const Operation op = ops[rng.below(ops.size())];
  const auto rhs = static_cast<Token>(rng.below(10));
  return make_instance(lhs, op, rhs, config);
}

std::vector<TaskInstance> instances(const TaskConfig& config, Split split) {
  std::vector<TaskInstance> out;
  for (Token lhs = 0; lhs < 10; ++lhs) {
    for (Operation op : allowed_ops(config)) {
      for (Token rhs = 0; rhs < 10; ++rhs) {
        TaskInstance inst = make_instance(lhs, op, rhs, config);
        if (inst.split == split) out.push_back(inst);
      }
    }
  }
  return out;
}

double score(const TaskInstance& instance, std::span<const Token> completion) {
  std::size_t i = 0;
  const auto expect = [&](Token t) {
    return i < completion.size() && completion[i++] == t;
  };
  if (!expect(kThinkOpen)) return 0.0;
  while (i < completion.size() && !is_structural(completion[i])) ++i;
  if (!expect(kThinkClose) || !expect(kAnswerOpen)) return 0.0;
  if (!expect(instance.answer) || !expect(kAnswerClose)) return 0.0;
  if (i == completion.size()) return 1.0;
  return completion[i] == kEos && i + 1 == completion.size() ? 1.0 : 0.0;
}

double pass_at_1(const policy::PolicyParams& policy,
                 std::span<const TaskInstance> validation,
                 std::size_t max_len) {
  if (validation.empty()) throw InputError("pass_at_1: empty validation set");
  double solved = 0.0;
  for (const TaskInstance& inst : validation) {
    const TokenSeq prompt = inst.prompt();
    solved += score(inst, policy::greedy_decode(policy, prompt, max_len));
  }
  return solved / static_cast<double>(validation.size());
}

TokenSeq demonstration(const TaskInstance& instance, ThinkStyle style) {
  TokenSeq out;
  out.reserve(10);
  out.push_back(kThinkOpen);
  switch (style) {
    case ThinkStyle::kEmpty:
      break;
    case ThinkStyle::kRestate:
      out.push_back(instance.lhs);
      out.push_back(op_token(instance.op));
      out.push_back(instance.rhs);
      break;
    case ThinkStyle::kOperands:
      out.push_back(instance.lhs);
      out.push_back(instance.rhs);
      break;
  }
  const Token tail[] = {kThinkClose, kAnswerOpen, instance.answer,
                        kAnswerClose, kEos};
  for (Token t : tail) out.push_back(t);
  return out;
}

void warm_start(policy::PolicyParams& params,
                std::span<const TaskInstance> corpus,
                const WarmupConfig& config) {
  if (config.steps == 0) return;
  if (corpus.empty()) throw InputError("warm_start: empty corpus");
  Rng rng(config.seed);
  const std::size_t flat = policy::layout_of(params.spec).total_count();
  std::vector<double> gradient(flat);
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::fill(gradient.begin(), gradient.end(), 0.0);
    std::vector<std::pair<TokenSeq, TokenSeq>> batch;
    std::size_t total_tokens = 0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      TaskInstance inst = corpus[rng.below(corpus.size())];
      if (config.answer_noise > 0.0 && rng.uniform() < config.answer_noise) {
        inst.answer = static_cast<Token>(rng.below(10));
      }
      TokenSeq demo = demonstration(inst, config.style);
      if (config.format_noise > 0.0 && rng.uniform() < config.format_noise) {
        demo.erase(demo.begin(), demo.begin() + (demo.size() - 4));
      }
      total_tokens += demo.size();
      batch.emplace_back(inst.prompt(), std::move(demo));
    }
    // Mean token-level negative log-likelihood.
    const double coeff = -1.0 / static_cast<double>(total_tokens);
    for (const auto& [prompt, demo] : batch) {
      const std::vector<double> coeffs(demo.size(), coeff);
      policy::accumulate_gradient(params, prompt, demo, coeffs, gradient);
    }
    policy::mask_gradient(params, gradient);
    policy::apply_update_in_place(params, gradient, config.learning_rate);
  }
}

}  // namespace ftis::task
