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

#ifndef FTIS_GRPO_H_
#define FTIS_GRPO_H_

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ftis/types.h"

namespace ftis::grpo {

// The six policy-gradient losses. F* variants zero out completions whose
// advantage is not positive and whose sequence KL reaches the threshold.
// TIS variants multiply the clipped surrogate by a capped importance weight.
// VIS variants put the generator probability in the clip ratio.
enum class Variant { kNoIS, kVIS, kTIS, kFNoIS, kFVIS, kFTIS };

inline constexpr Variant kAllVariants[] = {Variant::kNoIS,  Variant::kVIS,
                                           Variant::kTIS,   Variant::kFNoIS,
                                           Variant::kFVIS,  Variant::kFTIS};

std::string_view to_string(Variant v);
// Accepts "NoIS", "f-tis", "FTIS", ... (case-insensitive, dashes ignored).
Variant parse_variant(std::string_view name);

bool is_filtered(Variant v);
bool uses_truncation(Variant v);
bool uses_generator_ratio(Variant v);

struct VariantConfig {
  Variant variant = Variant::kFTIS;
  double epsilon = 0.2;       // clip half-width
  double cap = 2.0;           // C
  double kl_threshold = 50.0; // g
  // When false the truncated weight uses the live log-prob and carries
  // gradient; the default treats it as a constant.
  bool detach_truncation = true;
  // When true, filtered completions are dropped from the 1/G normalizer.
  bool renormalize_filtered = false;
};

// Throws ConfigError unless epsilon is in (0, 1), cap >= 1 and g > 0.
void validate(const VariantConfig& config);

// A prompt's completions together with everything the loss needs.
struct Group {
  PromptId prompt_id = 0;
  TokenSeq prompt;
  std::vector<Completion> completions;
  std::vector<double> rewards;
  // Computed from all rewards; filtering happens inside the loss.
  std::vector<double> advantages;
  std::vector<double> seq_kls;
  // Trainer's stop-gradient log-probs at the start of the update.
  std::vector<std::vector<double>> snapshot_logprobs;
};

// Throws InputError if the per-completion arrays disagree in size or G < 2.
void validate(const Group& group);

// (r - mean) / std with population statistics; all zeros for a constant list.
std::vector<double> group_advantages(std::span<const double> rewards);

// sum_t (r_t - 1 - ln r_t), r_t = exp(train_t - gen_t). Always >= 0.
double sequence_kl_estimate(std::span<const double> train_logprobs,
                            std::span<const float> gen_logprobs);

// Keeps advantage i iff advantages[i] > 0 or seq_kls[i] < g.
std::vector<double> filtered_advantages(std::span<const double> advantages,
                                        std::span<const double> seq_kls,
                                        double kl_threshold);

// min(exp(train - gen), cap) per token.
std::vector<double> truncated_is_weights(std::span<const double> train_logprobs,
                                         std::span<const float> gen_logprobs,
                                         double cap);

struct PerTokenTerm {
  double objective_value = 0.0;
  double dcoeff = 0.0;  // d objective / d logp_theta
  bool clipped = false;
  bool truncated = false;
};

PerTokenTerm per_token_objective(const VariantConfig& config,
                                 double logp_theta, double logp_detach,
                                 double logp_gen, double advantage);

struct CompletionDiagnostics {
  double seq_kl = 0.0;
  double effective_advantage = 0.0;
  bool filtered = false;
  double truncated_fraction = 0.0;
  double clipped_fraction = 0.0;
};

struct BatchSummary {
  double mean_kl = 0.0;
  double max_kl = 0.0;
  double filtered_fraction = 0.0;
  double truncated_fraction = 0.0;
  double clipped_fraction = 0.0;
};

struct BatchLoss {
  double loss = 0.0;
  std::vector<std::vector<CompletionDiagnostics>> diagnostics;
  // d loss / d logp_theta per [group][completion][token].
  std::vector<std::vector<std::vector<double>>> token_coefficients;
  BatchSummary summary;
};

// Returns the live log-probs logp_theta for completion i of group g.
using ThetaLogprobs =
    std::function<std::vector<double>(std::size_t group, std::size_t completion)>;

// loss = -(1/B) sum_groups (1/G) sum_i (1/|a_i|) sum_t objective.
BatchLoss batch_loss(const VariantConfig& config, std::span<const Group> groups,
                     const ThetaLogprobs& theta_logprobs);

// Single-step form where logp_theta equals the snapshot.
BatchLoss batch_loss(const VariantConfig& config, std::span<const Group> groups);

}  // namespace ftis::grpo

#endif  // FTIS_GRPO_H_
