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

#ifndef FTIS_ORACLE_H_
#define FTIS_ORACLE_H_

// Slow, literal reimplementations used as ground truth by the test suites.
// Nothing here calls into the arithmetic of the policy, loss or task code;
// only plain data types are shared.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ftis/grpo.h"
#include "ftis/policy.h"
#include "ftis/types.h"

namespace ftis::oracle {

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every i.
// Throws NumericError if f returns a non-finite value.
std::vector<double> finite_diff_gradient(
    const std::function<double(std::span<const double>)>& loss,
    std::span<const double> point, double h = 1e-4);

// Rebuilds the context and recomputes a full softmax at every position.
std::vector<double> naive_token_logprobs(const policy::PolicyParams& params,
                                         const TokenSeq& prompt,
                                         const TokenSeq& completion);

// Recomputes every logit at every step and keeps the first maximum.
TokenSeq naive_greedy_decode(const policy::PolicyParams& params,
                             const TokenSeq& prompt, std::size_t max_len);

// Literal transcription of the clipped group-relative objective with the
// filter case split and the capped importance weight. Advantages and KL
// estimates are recomputed from rewards and log-probs; the precomputed
// fields of each Group are ignored. `theta[g][i]` are the live log-probs.
double naive_loss(const grpo::VariantConfig& config,
                  const std::vector<grpo::Group>& groups,
                  const std::vector<std::vector<std::vector<double>>>& theta);

// Single-step form: live log-probs equal the snapshot.
double naive_loss(const grpo::VariantConfig& config,
                  const std::vector<grpo::Group>& groups);

using NextTokenDistribution =
    std::function<std::vector<double>(const TokenSeq& prefix)>;
using SequenceReward = std::function<double(const TokenSeq& completion)>;

inline constexpr double kMaxEnumeratedSequences = 1e6;

// Exact expected reward: sums P(sequence) * reward over every completion of
// at most max_len tokens, where generation stops at `eos`. Refuses with
// InputError when vocab^max_len exceeds kMaxEnumeratedSequences.
double enumerate_policy_accuracy(const NextTokenDistribution& next_probs,
                                 std::size_t vocab_size, Token eos,
                                 const TokenSeq& prompt,
                                 const SequenceReward& reward,
                                 std::size_t max_len);

// Same, with probabilities from a policy's naive forward pass.
double enumerate_policy_accuracy(const policy::PolicyParams& params,
                                 const TokenSeq& prompt,
                                 const SequenceReward& reward,
                                 std::size_t max_len);

}  // namespace ftis::oracle

#endif  // FTIS_ORACLE_H_
