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

#include "ftis/oracle.h"

#include <cmath>
#include <string>

#include "ftis/errors.h"

namespace ftis::oracle {
namespace {

using Matrix = std::vector<std::vector<double>>;

// Unpacks the flat parameter array into matrices, deriving the offsets from
// the spec dimensions directly.
struct Unpacked {
  Matrix embedding;  // vocab x embed
  Matrix w1;         // hidden x (window*embed)
  std::vector<double> b1;
  Matrix w2;         // vocab x hidden, adapter delta already added
  std::vector<double> b2;
};

Unpacked unpack(const policy::PolicyParams& params) {
  const auto& s = params.spec;
  const std::size_t V = s.vocab_size, D = s.embed_dim, H = s.hidden_dim,
                    K = s.context_window, R = s.adapter_rank;
  Unpacked u;
  std::size_t at = 0;
  u.embedding.assign(V, std::vector<double>(D));
  for (std::size_t v = 0; v < V; ++v)
    for (std::size_t e = 0; e < D; ++e) u.embedding[v][e] = params.base.at(at++);
  u.w1.assign(H, std::vector<double>(K * D));
  for (std::size_t j = 0; j < H; ++j)
    for (std::size_t i = 0; i < K * D; ++i) u.w1[j][i] = params.base.at(at++);
  u.b1.resize(H);
  for (std::size_t j = 0; j < H; ++j) u.b1[j] = params.base.at(at++);
  u.w2.assign(V, std::vector<double>(H));
  for (std::size_t v = 0; v < V; ++v)
    for (std::size_t j = 0; j < H; ++j) u.w2[v][j] = params.base.at(at++);
  u.b2.resize(V);
  for (std::size_t v = 0; v < V; ++v) u.b2[v] = params.base.at(at++);
  if (at != params.base.size()) throw InputError("oracle: parameter count mismatch");
  if (R > 0) {
    // W2 + A * B, formed explicitly.
    for (std::size_t v = 0; v < V; ++v) {
      for (std::size_t j = 0; j < H; ++j) {
        double delta = 0.0;
        for (std::size_t q = 0; q < R; ++q) {
          delta += params.adapter_a.at(v * R + q) * params.adapter_b.at(q * H + j);
        }
        u.w2[v][j] += delta;
      }
    }
  }
  return u;
}

std::vector<double> softmax_after(const policy::PolicyParams& params,
                                  const Unpacked& u, const TokenSeq& sequence) {
  const auto& s = params.spec;
  const std::size_t K = s.context_window, D = s.embed_dim, H = s.hidden_dim,
                    V = s.vocab_size;
  // Window of the last K tokens, left-padded with zeros.
  std::vector<double> x;
  for (std::size_t slot = 0; slot < K; ++slot) {
    const long pos = static_cast<long>(sequence.size()) - static_cast<long>(K) +
                     static_cast<long>(slot);
    for (std::size_t e = 0; e < D; ++e) {
      x.push_back(pos < 0 ? 0.0 : u.embedding.at(sequence.at(pos)).at(e));
    }
  }
  std::vector<double> hidden(H);
  for (std::size_t j = 0; j < H; ++j) {
    double z = u.b1[j];
    for (std::size_t i = 0; i < x.size(); ++i) z += u.w1[j][i] * x[i];
    hidden[j] = std::tanh(z);
  }
  std::vector<double> logits(V);
  for (std::size_t v = 0; v < V; ++v) {
    double z = u.b2[v];
    for (std::size_t j = 0; j < H; ++j) z += u.w2[v][j] * hidden[j];
    logits[v] = z;
  }
  double biggest = logits[0];
  for (double z : logits) biggest = z > biggest ? z : biggest;
  double total = 0.0;
  std::vector<double> probs(V);
  for (std::size_t v = 0; v < V; ++v) {
    probs[v] = std::exp(logits[v] - biggest);
    total += probs[v];
  }
  for (double& p : probs) p /= total;
  return probs;
}

bool is_filtered_variant(grpo::Variant v) {
  return v == grpo::Variant::kFNoIS || v == grpo::Variant::kFVIS ||
         v == grpo::Variant::kFTIS;
}

}  // namespace

std::vector<double> finite_diff_gradient(
    const std::function<double(std::span<const double>)>& loss,
    std::span<const double> point, double h) {
  if (!(h > 0.0)) throw InputError("finite_diff_gradient: h must be positive");
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss(x);
    x[i] = saved - h;
    const double down = loss(x);
    x[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_gradient: loss is not finite at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

std::vector<double> naive_token_logprobs(const policy::PolicyParams& params,
                                         const TokenSeq& prompt,
                                         const TokenSeq& completion) {
  const Unpacked u = unpack(params);
  std::vector<double> out;
  for (std::size_t t = 0; t < completion.size(); ++t) {
    TokenSeq context = prompt;
    for (std::size_t s = 0; s < t; ++s) context.push_back(completion[s]);
    const std::vector<double> probs = softmax_after(params, u, context);
    out.push_back(std::log(probs.at(completion[t])));
  }
  return out;
}

TokenSeq naive_greedy_decode(const policy::PolicyParams& params,
                             const TokenSeq& prompt, std::size_t max_len) {
  const Unpacked u = unpack(params);
  const Token eos = static_cast<Token>(params.spec.vocab_size - 1);
  TokenSeq out;
  while (out.size() < max_len) {
    TokenSeq context = prompt;
    context.insert(context.end(), out.begin(), out.end());
    const std::vector<double> probs = softmax_after(params, u, context);
    Token best = 0;
    for (Token v = 0; v < probs.size(); ++v) {
      if (probs[v] > probs[best]) best = v;
    }
    out.push_back(best);
    if (best == eos) break;
  }
  return out;
}

double naive_loss(const grpo::VariantConfig& config,
                  const std::vector<grpo::Group>& groups,
                  const std::vector<std::vector<std::vector<double>>>& theta) {
  const grpo::Variant variant = config.variant;
  const bool truncate =
      variant == grpo::Variant::kTIS || variant == grpo::Variant::kFTIS;
  const bool vanilla =
      variant == grpo::Variant::kVIS || variant == grpo::Variant::kFVIS;
  const double eps = config.epsilon;

  double total = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const grpo::Group& group = groups[g];
    const std::size_t G = group.completions.size();

    // Group statistics.
    double mu = 0.0;
    for (std::size_t i = 0; i < G; ++i) mu += group.rewards[i];
    mu /= G;
    double sigma = 0.0;
    for (std::size_t i = 0; i < G; ++i) {
      sigma += (group.rewards[i] - mu) * (group.rewards[i] - mu);
    }
    sigma = std::sqrt(sigma / G);
    bool constant = true;
    for (std::size_t i = 0; i < G; ++i) {
      if (group.rewards[i] != group.rewards[0]) constant = false;
    }

    std::vector<double> adv(G);
    std::vector<bool> dropped(G, false);
    for (std::size_t i = 0; i < G; ++i) {
      adv[i] = constant ? 0.0 : (group.rewards[i] - mu) / sigma;
      if (is_filtered_variant(variant)) {
        double kl = 0.0;
        for (std::size_t t = 0; t < group.completions[i].tokens.size(); ++t) {
          const double r = std::exp(group.snapshot_logprobs[i][t] -
                                    group.completions[i].gen_logprobs[t]);
          kl += r - 1.0 - std::log(r);
        }
        if (!(adv[i] > 0.0 || kl < config.kl_threshold)) {
          adv[i] = 0.0;
          dropped[i] = true;
        }
      }
    }
    double denom = G;
    if (config.renormalize_filtered) {
      denom = 0.0;
      for (std::size_t i = 0; i < G; ++i) denom += dropped[i] ? 0.0 : 1.0;
    }

    double group_sum = 0.0;
    for (std::size_t i = 0; i < G; ++i) {
      const Completion& c = group.completions[i];
      double seq_sum = 0.0;
      for (std::size_t t = 0; t < c.tokens.size(); ++t) {
        const double p_theta = std::exp(theta[g][i][t]);
        const double p_detach = std::exp(group.snapshot_logprobs[i][t]);
        const double p_gen = std::exp(static_cast<double>(c.gen_logprobs[t]));
        const double ratio = vanilla ? p_theta / p_gen : p_theta / p_detach;
        double clipped_ratio = ratio;
        if (clipped_ratio < 1.0 - eps) clipped_ratio = 1.0 - eps;
        if (clipped_ratio > 1.0 + eps) clipped_ratio = 1.0 + eps;
        const double a = ratio * adv[i];
        const double b = clipped_ratio * adv[i];
        double term = a < b ? a : b;
        if (truncate) {
          const double is_ratio =
              (config.detach_truncation ? p_detach : p_theta) / p_gen;
          term *= is_ratio < config.cap ? is_ratio : config.cap;
        }
        seq_sum += term;
      }
      group_sum += seq_sum / c.tokens.size();
    }
    if (denom > 0.0) total += group_sum / denom;
  }
  return -total / groups.size();
}

double naive_loss(const grpo::VariantConfig& config,
                  const std::vector<grpo::Group>& groups) {
  std::vector<std::vector<std::vector<double>>> theta;
  for (const grpo::Group& g : groups) theta.push_back(g.snapshot_logprobs);
  return naive_loss(config, groups, theta);
}

double enumerate_policy_accuracy(const NextTokenDistribution& next_probs,
                                 std::size_t vocab_size, Token eos,
                                 const TokenSeq& prompt,
                                 const SequenceReward& reward,
                                 std::size_t max_len) {
  if (std::pow(static_cast<double>(vocab_size), static_cast<double>(max_len)) >
      kMaxEnumeratedSequences) {
    throw InputError("enumerate_policy_accuracy: " + std::to_string(vocab_size) +
                     "^" + std::to_string(max_len) +
                     " sequences exceed the enumeration limit");
  }
  // Depth-first walk over completions, carrying the prefix probability.
  double expected = 0.0;
  std::function<void(TokenSeq&, double)> walk = [&](TokenSeq& completion,
                                                    double prob) {
    TokenSeq prefix = prompt;
    prefix.insert(prefix.end(), completion.begin(), completion.end());
    const std::vector<double> probs = next_probs(prefix);
    for (Token v = 0; v < vocab_size; ++v) {
      const double p = prob * probs.at(v);
      completion.push_back(v);
      if (v == eos || completion.size() == max_len) {
        expected += p * reward(completion);
      } else {
        walk(completion, p);
      }
      completion.pop_back();
    }
  };
  TokenSeq completion;
  if (max_len > 0) walk(completion, 1.0);
  return expected;
}

double enumerate_policy_accuracy(const policy::PolicyParams& params,
                                 const TokenSeq& prompt,
                                 const SequenceReward& reward,
                                 std::size_t max_len) {
  const Unpacked u = unpack(params);
  return enumerate_policy_accuracy(
      [&](const TokenSeq& prefix) { return softmax_after(params, u, prefix); },
      params.spec.vocab_size, static_cast<Token>(params.spec.vocab_size - 1),
      prompt, reward, max_len);
}

}  // namespace ftis::oracle
