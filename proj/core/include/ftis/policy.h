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

#ifndef FTIS_POLICY_H_
#define FTIS_POLICY_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ftis/types.h"

namespace ftis::policy {

// Architecture and heterogeneity knobs of one policy.
//
// The network is a fixed-window MLP over the last `context_window` tokens:
//
//   logits = W2 * tanh(W1 * concat(embed(ctx)) + b1) + b2
//
// Positions left of the start of the sequence use a fixed all-zero padding
// embedding. With `adapter_rank > 0`, W2 is frozen and replaced by
// W2 + A * B where A is vocab x rank (zero at init) and B is rank x hidden.
struct PolicySpec {
  std::size_t vocab_size = 17;
  std::size_t context_window = 8;
  std::size_t embed_dim = 8;
  std::size_t hidden_dim = 16;
  std::uint64_t init_seed = 0;
  // One flag per base parameter; false means the parameter never changes.
  // Empty means every parameter is trainable.
  std::vector<bool> trainable_mask;
  std::size_t adapter_rank = 0;

  friend bool operator==(const PolicySpec&, const PolicySpec&) = default;
};

// Offsets of each block inside the flat base parameter array.
struct ParamLayout {
  std::size_t embedding = 0;  // vocab x embed
  std::size_t w1 = 0;         // hidden x (window * embed), row-major
  std::size_t b1 = 0;         // hidden
  std::size_t w2 = 0;         // vocab x hidden, row-major
  std::size_t b2 = 0;         // vocab
  std::size_t base_count = 0;
  std::size_t adapter_a_count = 0;  // vocab x rank
  std::size_t adapter_b_count = 0;  // rank x hidden

  std::size_t total_count() const {
    return base_count + adapter_a_count + adapter_b_count;
  }
};

enum class Block { kEmbedding, kHidden, kOutput };

ParamLayout layout_of(const PolicySpec& spec);

// V*d + (k*d + 1)*h + (h + 1)*V.
std::size_t base_parameter_count(const PolicySpec& spec);

// Returns `spec` with a full-length, all-true trainable mask.
PolicySpec with_full_mask(PolicySpec spec);

// Clears the trainable flags of one block. An empty mask is expanded first.
void freeze(PolicySpec& spec, Block block);

// Throws SpecError when the dimensions or the mask are inconsistent.
void validate(const PolicySpec& spec);

struct PolicyParams {
  PolicySpec spec;
  std::vector<double> base;
  std::vector<double> adapter_a;
  std::vector<double> adapter_b;

  bool has_adapter() const { return spec.adapter_rank > 0; }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

// Flat view used for gradients: [base | adapter_a | adapter_b].
std::vector<double> flatten(const PolicyParams& params);
void unflatten(std::span<const double> flat, PolicyParams& params);

// Deterministic initialization from spec.init_seed: normal(0, 0.02) weights,
// zero biases, zero adapter A and normal(0, 0.02) adapter B.
PolicyParams init_policy(const PolicySpec& spec);

// Log-probability (nats) of each completion token given the preceding
// context window of prompt ++ completion.
std::vector<double> token_logprobs(const PolicyParams& params,
                                   std::span<const Token> prompt,
                                   std::span<const Token> completion);

// Full next-token log-distribution after `prefix`.
std::vector<double> next_token_logprobs(const PolicyParams& params,
                                        std::span<const Token> prefix);

Token eos_token(const PolicySpec& spec);

Completion sample_completion(const PolicyParams& params,
                             std::span<const Token> prompt,
                             std::size_t max_len, std::uint64_t rng_seed,
                             double temperature = 1.0);

// Argmax decoding with ties broken towards the lowest token id.
TokenSeq greedy_decode(const PolicyParams& params,
                       std::span<const Token> prompt, std::size_t max_len);

// Gradient of sum_t coefficients[t] * logp_t with respect to the flattened
// parameters. Frozen entries (mask, or W2 under an adapter) are exactly zero.
std::vector<double> backward(const PolicyParams& params,
                             std::span<const Token> prompt,
                             std::span<const Token> completion,
                             std::span<const double> coefficients);

// Accumulating form of backward(); `gradient` must be sized to the flat
// parameter count. Masking is applied by the caller via mask_gradient().
void accumulate_gradient(const PolicyParams& params,
                         std::span<const Token> prompt,
                         std::span<const Token> completion,
                         std::span<const double> coefficients,
                         std::span<double> gradient);

void mask_gradient(const PolicyParams& params, std::span<double> gradient);

// theta <- theta - learning_rate * gradient on trainable entries. Throws
// NumericError and leaves params untouched if any gradient entry is not
// finite.
PolicyParams apply_update(const PolicyParams& params,
                          std::span<const double> gradient,
                          double learning_rate);
void apply_update_in_place(PolicyParams& params,
                           std::span<const double> gradient,
                           double learning_rate);

}  // namespace ftis::policy

#endif  // FTIS_POLICY_H_
