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

#include "ftis/policy.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ftis/errors.h"
#include "ftis/random.h"

namespace ftis::policy {
namespace {

constexpr double kInitScale = 0.02;

// Activations of one forward evaluation.
struct Activations {
  std::vector<double> input;     // window * embed
  std::vector<double> hidden;    // tanh output
  std::vector<double> adapted;   // B * hidden, rank
  std::vector<double> logprobs;  // vocab

  explicit Activations(const PolicySpec& spec)
      : input(spec.context_window * spec.embed_dim),
        hidden(spec.hidden_dim),
        adapted(spec.adapter_rank),
        logprobs(spec.vocab_size) {}
};

void check_tokens(const PolicySpec& spec, std::span<const Token> tokens,
                  const char* what) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= spec.vocab_size) {
      throw InputError(std::string(what) + " token " + std::to_string(i) +
                       " = " + std::to_string(tokens[i]) +
                       " is outside vocabulary of size " +
                       std::to_string(spec.vocab_size));
    }
  }
}

// Token at sequence position `pos` of prompt ++ completion.
inline Token token_at(std::span<const Token> prompt,
                      std::span<const Token> completion, std::size_t pos) {
  return pos < prompt.size() ? prompt[pos] : completion[pos - prompt.size()];
}

// Evaluates the next-token log-distribution given the first `length` tokens
// of prompt ++ completion.
void forward(const PolicyParams& params, const ParamLayout& layout,
             std::span<const Token> prompt, std::span<const Token> completion,
             std::size_t length, Activations& act) {
  const PolicySpec& spec = params.spec;
  const std::size_t k = spec.context_window;
  const std::size_t d = spec.embed_dim;
  const std::size_t h = spec.hidden_dim;
  const std::size_t v = spec.vocab_size;
  const double* theta = params.base.data();

  // Slot 0 holds the oldest token of the window.
  for (std::size_t slot = 0; slot < k; ++slot) {
    double* dst = act.input.data() + slot * d;
    if (length + slot < k) {
      std::fill(dst, dst + d, 0.0);
      continue;
    }
    const Token tok = token_at(prompt, completion, length + slot - k);
    const double* src = theta + layout.embedding + tok * d;
    std::copy(src, src + d, dst);
  }

  const std::size_t in = k * d;
  for (std::size_t j = 0; j < h; ++j) {
    const double* row = theta + layout.w1 + j * in;
    double acc = theta[layout.b1 + j];
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * act.input[i];
    act.hidden[j] = std::tanh(acc);
  }

  const std::size_t r = spec.adapter_rank;
  for (std::size_t q = 0; q < r; ++q) {
    const double* row = params.adapter_b.data() + q * h;
    double acc = 0.0;
    for (std::size_t j = 0; j < h; ++j) acc += row[j] * act.hidden[j];
    act.adapted[q] = acc;
  }

  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < v; ++o) {
    const double* row = theta + layout.w2 + o * h;
    double acc = theta[layout.b2 + o];
    for (std::size_t j = 0; j < h; ++j) acc += row[j] * act.hidden[j];
    if (r > 0) {
      const double* arow = params.adapter_a.data() + o * r;
      double delta = 0.0;
      for (std::size_t q = 0; q < r; ++q) delta += arow[q] * act.adapted[q];
      acc += delta;
    }
    act.logprobs[o] = acc;
    max_logit = std::max(max_logit, acc);
  }
  double sum = 0.0;
  for (std::size_t o = 0; o < v; ++o) sum += std::exp(act.logprobs[o] - max_logit);
  const double log_norm = max_logit + std::log(sum);
  for (std::size_t o = 0; o < v; ++o) act.logprobs[o] -= log_norm;
}

}  // namespace

ParamLayout layout_of(const PolicySpec& spec) {
  ParamLayout l;
  const std::size_t v = spec.vocab_size;
  const std::size_t d = spec.embed_dim;
  const std::size_t h = spec.hidden_dim;
  const std::size_t k = spec.context_window;
  l.embedding = 0;
  l.w1 = v * d;
  l.b1 = l.w1 + h * k * d;
  l.w2 = l.b1 + h;
  l.b2 = l.w2 + v * h;
  l.base_count = l.b2 + v;
  l.adapter_a_count = v * spec.adapter_rank;
  l.adapter_b_count = spec.adapter_rank * h;
  return l;
}

std::size_t base_parameter_count(const PolicySpec& spec) {
  return layout_of(spec).base_count;
}

PolicySpec with_full_mask(PolicySpec spec) {
  spec.trainable_mask.assign(base_parameter_count(spec), true);
  return spec;
}

void freeze(PolicySpec& spec, Block block) {
  const ParamLayout l = layout_of(spec);
  if (spec.trainable_mask.empty()) spec.trainable_mask.assign(l.base_count, true);
  if (spec.trainable_mask.size() != l.base_count) {
    throw SpecError("freeze: trainable mask is not sized to the parameters");
  }
  std::size_t begin = 0;
  std::size_t end = 0;
  switch (block) {
    case Block::kEmbedding:
      begin = l.embedding;
      end = l.w1;
      break;
    case Block::kHidden:
      begin = l.w1;
      end = l.w2;
      break;
    case Block::kOutput:
      begin = l.w2;
      end = l.base_count;
      break;
  }
  std::fill(spec.trainable_mask.begin() + begin,
            spec.trainable_mask.begin() + end, false);
}

void validate(const PolicySpec& spec) {
  if (spec.vocab_size < 2) throw SpecError("vocab_size must be at least 2");
  if (spec.context_window < 1) {
    throw SpecError("context_window must be at least 1");
  }
  if (spec.embed_dim < 1) throw SpecError("embed_dim must be at least 1");
  if (spec.hidden_dim < 1) throw SpecError("hidden_dim must be at least 1");
  if (spec.adapter_rank > 0 &&
      spec.adapter_rank >= std::min(spec.embed_dim, spec.hidden_dim)) {
    throw SpecError("adapter_rank must be below min(embed_dim, hidden_dim)");
  }
  const std::size_t count = base_parameter_count(spec);
  if (!spec.trainable_mask.empty() && spec.trainable_mask.size() != count) {
    throw SpecError("trainable_mask has " +
                    std::to_string(spec.trainable_mask.size()) +
                    " entries, expected " + std::to_string(count));
  }
}

std::vector<double> flatten(const PolicyParams& params) {
  std::vector<double> flat;
  flat.reserve(params.base.size() + params.adapter_a.size() +
               params.adapter_b.size());
  flat.insert(flat.end(), params.base.begin(), params.base.end());
  flat.insert(flat.end(), params.adapter_a.begin(), params.adapter_a.end());
  flat.insert(flat.end(), params.adapter_b.begin(), params.adapter_b.end());
  return flat;
}

void unflatten(std::span<const double> flat, PolicyParams& params) {
  const std::size_t nb = params.base.size();
  const std::size_t na = params.adapter_a.size();
  const std::size_t nq = params.adapter_b.size();
  if (flat.size() != nb + na + nq) {
    throw InputError("unflatten: expected " + std::to_string(nb + na + nq) +
                     " values, got " + std::to_string(flat.size()));
  }
  std::copy_n(flat.begin(), nb, params.base.begin());
  std::copy_n(flat.begin() + nb, na, params.adapter_a.begin());
  std::copy_n(flat.begin() + nb + na, nq, params.adapter_b.begin());
}

PolicyParams init_policy(const PolicySpec& spec) {
  validate(spec);
  const ParamLayout l = layout_of(spec);
  PolicyParams p;
  p.spec = spec;
  p.base.assign(l.base_count, 0.0);
  p.adapter_a.assign(l.adapter_a_count, 0.0);
  p.adapter_b.assign(l.adapter_b_count, 0.0);

  Rng rng(spec.init_seed);
  for (std::size_t i = l.embedding; i < l.b1; ++i) p.base[i] = kInitScale * rng.normal();
  for (std::size_t i = l.w2; i < l.b2; ++i) p.base[i] = kInitScale * rng.normal();
  // Drawn last so the base weights do not depend on the adapter rank.
  for (double& b : p.adapter_b) b = kInitScale * rng.normal();
  return p;
}

std::vector<double> token_logprobs(const PolicyParams& params,
                                   std::span<const Token> prompt,
                                   std::span<const Token> completion) {
  const PolicySpec& spec = params.spec;
  if (completion.empty()) throw InputError("token_logprobs: empty completion");
  check_tokens(spec, prompt, "prompt");
  check_tokens(spec, completion, "completion");
  const ParamLayout layout = layout_of(spec);
  Activations act(spec);
  std::vector<double> out(completion.size());
  for (std::size_t t = 0; t < completion.size(); ++t) {
    forward(params, layout, prompt, completion, prompt.size() + t, act);
    out[t] = act.logprobs[completion[t]];
  }
  return out;
}

std::vector<double> next_token_logprobs(const PolicyParams& params,
                                        std::span<const Token> prefix) {
  check_tokens(params.spec, prefix, "prefix");
  Activations act(params.spec);
  forward(params, layout_of(params.spec), prefix, {}, prefix.size(), act);
  return act.logprobs;
}

Token eos_token(const PolicySpec& spec) {
  return static_cast<Token>(spec.vocab_size - 1);
}

Completion sample_completion(const PolicyParams& params,
                             std::span<const Token> prompt,
                             std::size_t max_len, std::uint64_t rng_seed,
                             double temperature) {
  const PolicySpec& spec = params.spec;
  if (max_len < 1) throw InputError("sample_completion: max_len must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InputError("sample_completion: temperature must be positive");
  }
  check_tokens(spec, prompt, "prompt");
  const ParamLayout layout = layout_of(spec);
  const Token eos = eos_token(spec);
  Activations act(spec);
  std::vector<double> probs(spec.vocab_size);
  Rng rng(rng_seed);

  Completion c;
  c.tokens.reserve(max_len);
  c.gen_logprobs.reserve(max_len);
  while (c.tokens.size() < max_len) {
    forward(params, layout, prompt, c.tokens, prompt.size() + c.tokens.size(),
            act);
    if (temperature != 1.0) {
      double max_lp = -std::numeric_limits<double>::infinity();
      for (double& lp : act.logprobs) {
        lp /= temperature;
        max_lp = std::max(max_lp, lp);
      }
      double sum = 0.0;
      for (double lp : act.logprobs) sum += std::exp(lp - max_lp);
      const double norm = max_lp + std::log(sum);
      for (double& lp : act.logprobs) lp -= norm;
    }
    for (std::size_t o = 0; o < spec.vocab_size; ++o) {
      probs[o] = std::exp(act.logprobs[o]);
    }
    // Inverse CDF; falls back to the last token with nonzero mass when
    // rounding leaves u above the cumulative sum.
    const double u = rng.uniform();
    double cum = 0.0;
    Token pick = 0;
    for (std::size_t o = 0; o < spec.vocab_size; ++o) {
      if (probs[o] <= 0.0) continue;
      pick = static_cast<Token>(o);
      cum += probs[o];
      if (u < cum) break;
    }
    c.tokens.push_back(pick);
    // Clamp keeps the single-precision value a valid log-probability.
    c.gen_logprobs.push_back(
        std::min(0.0f, static_cast<float>(act.logprobs[pick])));
    if (pick == eos) break;
  }
  return c;
}

TokenSeq greedy_decode(const PolicyParams& params,
                       std::span<const Token> prompt, std::size_t max_len) {
  const PolicySpec& spec = params.spec;
  check_tokens(spec, prompt, "prompt");
  const ParamLayout layout = layout_of(spec);
  const Token eos = eos_token(spec);
  Activations act(spec);
  TokenSeq out;
  out.reserve(max_len);
  while (out.size() < max_len) {
    forward(params, layout, prompt, out, prompt.size() + out.size(), act);
    Token best = 0;
    for (std::size_t o = 1; o < spec.vocab_size; ++o) {
      if (act.logprobs[o] > act.logprobs[best]) best = static_cast<Token>(o);
    }
    out.push_back(best);
    if (best == eos) break;
  }
  return out;
}

void accumulate_gradient(const PolicyParams& params,
                         std::span<const Token> prompt,
                         std::span<const Token> completion,
                         std::span<const double> coefficients,
                         std::span<double> gradient) {
  const PolicySpec& spec = params.spec;
  if (coefficients.size() != completion.size()) {
    throw InputError("backward: " + std::to_string(coefficients.size()) +
                     " coefficients for " + std::to_string(completion.size()) +
                     " tokens");
  }
  const ParamLayout layout = layout_of(spec);
  if (gradient.size() != layout.total_count()) {
    throw InputError("backward: gradient buffer has wrong size");
  }
  check_tokens(spec, prompt, "prompt");
  check_tokens(spec, completion, "completion");

  const std::size_t k = spec.context_window;
  const std::size_t d = spec.embed_dim;
  const std::size_t h = spec.hidden_dim;
  const std::size_t v = spec.vocab_size;
  const std::size_t r = spec.adapter_rank;
  const std::size_t in = k * d;
  const double* theta = params.base.data();
  double* g = gradient.data();
  double* ga = g + layout.base_count;
  double* gb = ga + layout.adapter_a_count;

  Activations act(spec);
  std::vector<double> dlogits(v);
  std::vector<double> dhidden(h);
  std::vector<double> dadapted(r);
  std::vector<double> dinput(in);

  for (std::size_t t = 0; t < completion.size(); ++t) {
    const double coeff = coefficients[t];
    if (coeff == 0.0) continue;
    const std::size_t length = prompt.size() + t;
    forward(params, layout, prompt, completion, length, act);

    // d(coeff * log softmax[a]) / dlogits = coeff * (onehot(a) - softmax).
    for (std::size_t o = 0; o < v; ++o) {
      dlogits[o] = -coeff * std::exp(act.logprobs[o]);
    }
    dlogits[completion[t]] += coeff;

    std::fill(dhidden.begin(), dhidden.end(), 0.0);
    std::fill(dadapted.begin(), dadapted.end(), 0.0);
    for (std::size_t o = 0; o < v; ++o) {
      const double dl = dlogits[o];
      g[layout.b2 + o] += dl;
      const double* row = theta + layout.w2 + o * h;
      if (r == 0) {
        double* grow = g + layout.w2 + o * h;
        for (std::size_t j = 0; j < h; ++j) grow[j] += dl * act.hidden[j];
      }
      for (std::size_t j = 0; j < h; ++j) dhidden[j] += row[j] * dl;
      if (r > 0) {
        const double* arow = params.adapter_a.data() + o * r;
        double* garow = ga + o * r;
        for (std::size_t q = 0; q < r; ++q) {
          garow[q] += dl * act.adapted[q];
          dadapted[q] += arow[q] * dl;
        }
      }
    }
    for (std::size_t q = 0; q < r; ++q) {
      const double* brow = params.adapter_b.data() + q * h;
      double* gbrow = gb + q * h;
      for (std::size_t j = 0; j < h; ++j) {
        gbrow[j] += dadapted[q] * act.hidden[j];
        dhidden[j] += brow[j] * dadapted[q];
      }
    }

    std::fill(dinput.begin(), dinput.end(), 0.0);
    for (std::size_t j = 0; j < h; ++j) {
      const double dpre = dhidden[j] * (1.0 - act.hidden[j] * act.hidden[j]);
      if (dpre == 0.0) continue;
      g[layout.b1 + j] += dpre;
      const double* row = theta + layout.w1 + j * in;
      double* grow = g + layout.w1 + j * in;
      for (std::size_t i = 0; i < in; ++i) {
        grow[i] += dpre * act.input[i];
        dinput[i] += row[i] * dpre;
      }
    }

    for (std::size_t slot = 0; slot < k; ++slot) {
      if (length + slot < k) continue;  // padding is not a parameter
      const Token tok = token_at(prompt, completion, length + slot - k);
      double* ge = g + layout.embedding + tok * d;
      const double* src = dinput.data() + slot * d;
      for (std::size_t e = 0; e < d; ++e) ge[e] += src[e];
    }
  }
}

void mask_gradient(const PolicyParams& params, std::span<double> gradient) {
  const ParamLayout layout = layout_of(params.spec);
  const auto& mask = params.spec.trainable_mask;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) gradient[i] = 0.0;
  }
  if (params.has_adapter()) {
    std::fill(gradient.begin() + layout.w2, gradient.begin() + layout.b2, 0.0);
  }
}

std::vector<double> backward(const PolicyParams& params,
                             std::span<const Token> prompt,
                             std::span<const Token> completion,
                             std::span<const double> coefficients) {
  std::vector<double> gradient(layout_of(params.spec).total_count(), 0.0);
  accumulate_gradient(params, prompt, completion, coefficients, gradient);
  mask_gradient(params, gradient);
  return gradient;
}

void apply_update_in_place(PolicyParams& params,
                           std::span<const double> gradient,
                           double learning_rate) {
  const ParamLayout layout = layout_of(params.spec);
  if (gradient.size() != layout.total_count()) {
    throw InputError("apply_update: gradient has " +
                     std::to_string(gradient.size()) + " entries, expected " +
                     std::to_string(layout.total_count()));
  }
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    if (!std::isfinite(gradient[i])) {
      throw NumericError("apply_update: gradient entry " + std::to_string(i) +
                         " is not finite");
    }
  }
  const auto& mask = params.spec.trainable_mask;
  const bool adapter = params.has_adapter();
  for (std::size_t i = 0; i < layout.base_count; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    if (adapter && i >= layout.w2 && i < layout.b2) continue;
    params.base[i] -= learning_rate * gradient[i];
  }
  const double* ga = gradient.data() + layout.base_count;
  for (std::size_t i = 0; i < params.adapter_a.size(); ++i) {
    params.adapter_a[i] -= learning_rate * ga[i];
  }
  const double* gb = ga + layout.adapter_a_count;
  for (std::size_t i = 0; i < params.adapter_b.size(); ++i) {
    params.adapter_b[i] -= learning_rate * gb[i];
  }
}

PolicyParams apply_update(const PolicyParams& params,
                          std::span<const double> gradient,
                          double learning_rate) {
  PolicyParams next = params;
  apply_update_in_place(next, gradient, learning_rate);
  return next;
}

}  // namespace ftis::policy
