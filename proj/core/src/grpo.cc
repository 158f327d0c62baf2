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

#include "ftis/grpo.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "ftis/errors.h"

namespace ftis::grpo {
namespace {

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw NumericError(std::string("per_token_objective: ") + what +
                       " is not finite");
  }
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kNoIS:
      return "NoIS";
    case Variant::kVIS:
      return "VIS";
    case Variant::kTIS:
      return "TIS";
    case Variant::kFNoIS:
      return "FNoIS";
    case Variant::kFVIS:
      return "FVIS";
    case Variant::kFTIS:
      return "FTIS";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  std::string key;
  for (char c : name) {
    if (c == '-' || c == '_') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  for (Variant v : kAllVariants) {
    std::string canon;
    for (char c : to_string(v)) {
      canon.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (canon == key) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected NoIS, VIS, TIS, FNoIS, FVIS or FTIS)");
}

bool is_filtered(Variant v) {
  return v == Variant::kFNoIS || v == Variant::kFVIS || v == Variant::kFTIS;
}

bool uses_truncation(Variant v) {
  return v == Variant::kTIS || v == Variant::kFTIS;
}

bool uses_generator_ratio(Variant v) {
  return v == Variant::kVIS || v == Variant::kFVIS;
}

void validate(const VariantConfig& config) {
  if (!(config.epsilon > 0.0 && config.epsilon < 1.0)) {
    throw ConfigError("epsilon must lie in (0, 1)");
  }
  if (!(config.cap >= 1.0)) throw ConfigError("cap must be at least 1");
  if (!(config.kl_threshold > 0.0)) {
    throw ConfigError("kl_threshold must be positive");
  }
}

void validate(const Group& group) {
  const std::size_t g = group.completions.size();
  if (g < 2) {
    throw InputError("group " + std::to_string(group.prompt_id) +
                     " has fewer than 2 completions");
  }
  if (group.rewards.size() != g || group.advantages.size() != g ||
      group.seq_kls.size() != g || group.snapshot_logprobs.size() != g) {
    throw InputError("group " + std::to_string(group.prompt_id) +
                     ": per-completion arrays differ in length");
  }
  for (std::size_t i = 0; i < g; ++i) {
    const Completion& c = group.completions[i];
    if (c.tokens.empty() || c.tokens.size() != c.gen_logprobs.size() ||
        c.tokens.size() != group.snapshot_logprobs[i].size()) {
      throw InputError("group " + std::to_string(group.prompt_id) +
                       ": completion " + std::to_string(i) +
                       " has inconsistent token and log-prob counts");
    }
  }
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) {
    throw InputError("group_advantages: need at least 2 rewards");
  }
  std::vector<double> out(rewards.size(), 0.0);
  if (std::all_of(rewards.begin(), rewards.end(),
                  [&](double r) { return r == rewards.front(); })) {
    return out;
  }
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std_dev = std::sqrt(var / n);
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out[i] = (rewards[i] - mean) / std_dev;
  }
  return out;
}

double sequence_kl_estimate(std::span<const double> train_logprobs,
                            std::span<const float> gen_logprobs) {
  if (train_logprobs.size() != gen_logprobs.size()) {
    throw InputError("sequence_kl_estimate: length mismatch");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < train_logprobs.size(); ++t) {
    const double log_ratio =
        train_logprobs[t] - static_cast<double>(gen_logprobs[t]);
    // r - 1 - ln r with r = e^x, written to stay accurate near x = 0.
    total += std::max(0.0, std::expm1(log_ratio) - log_ratio);
  }
  return total;
}

std::vector<double> filtered_advantages(std::span<const double> advantages,
                                        std::span<const double> seq_kls,
                                        double kl_threshold) {
  if (advantages.size() != seq_kls.size()) {
    throw InputError("filtered_advantages: length mismatch");
  }
  std::vector<double> out(advantages.size());
  for (std::size_t i = 0; i < advantages.size(); ++i) {
    const bool keep = advantages[i] > 0.0 || seq_kls[i] < kl_threshold;
    out[i] = keep ? advantages[i] : 0.0;
  }
  return out;
}

std::vector<double> truncated_is_weights(std::span<const double> train_logprobs,
                                         std::span<const float> gen_logprobs,
                                         double cap) {
  if (train_logprobs.size() != gen_logprobs.size()) {
    throw InputError("truncated_is_weights: length mismatch");
  }
  std::vector<double> out(train_logprobs.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    const double ratio = std::exp(train_logprobs[t] -
                                  static_cast<double>(gen_logprobs[t]));
    out[t] = std::min(ratio, cap);
  }
  return out;
}

PerTokenTerm per_token_objective(const VariantConfig& config,
                                 double logp_theta, double logp_detach,
                                 double logp_gen, double advantage) {
  require_finite(logp_theta, "logp_theta");
  require_finite(logp_detach, "logp_detach");
  require_finite(logp_gen, "logp_gen");
  require_finite(advantage, "advantage");

  PerTokenTerm term;
  double weight = 1.0;
  double dweight = 0.0;
  if (uses_truncation(config.variant)) {
    const double ratio = std::exp(
        (config.detach_truncation ? logp_detach : logp_theta) - logp_gen);
    if (ratio > config.cap) {
      weight = config.cap;
      term.truncated = true;
    } else {
      weight = ratio;
      dweight = config.detach_truncation ? 0.0 : ratio;
    }
  }
  if (advantage == 0.0) return term;

  const double ratio = std::exp(
      logp_theta -
      (uses_generator_ratio(config.variant) ? logp_gen : logp_detach));
  const double unclipped = ratio * advantage;
  const double clipped =
      std::clamp(ratio, 1.0 - config.epsilon, 1.0 + config.epsilon) * advantage;
  double surrogate;
  double dsurrogate;
  if (unclipped <= clipped) {
    surrogate = unclipped;
    dsurrogate = unclipped;
  } else {
    surrogate = clipped;
    dsurrogate = 0.0;
    term.clipped = true;
  }
  term.objective_value = weight * surrogate;
  term.dcoeff = dweight * surrogate + weight * dsurrogate;
  return term;
}

BatchLoss batch_loss(const VariantConfig& config, std::span<const Group> groups,
                     const ThetaLogprobs& theta_logprobs) {
  if (groups.empty()) throw InputError("batch_loss: empty batch");
  validate(config);
  const bool filtered_variant = is_filtered(config.variant);
  const bool truncating = uses_truncation(config.variant);
  const double batch_scale = 1.0 / static_cast<double>(groups.size());

  BatchLoss out;
  out.diagnostics.resize(groups.size());
  out.token_coefficients.resize(groups.size());
  std::size_t completions = 0;
  std::size_t filtered = 0;
  std::size_t tokens = 0;
  std::size_t truncated = 0;
  std::size_t clipped = 0;
  double kl_sum = 0.0;

  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& group = groups[gi];
    validate(group);
    const std::size_t size = group.completions.size();
    const std::vector<double> advantages =
        filtered_variant ? filtered_advantages(group.advantages, group.seq_kls,
                                               config.kl_threshold)
                         : group.advantages;

    auto& diag = out.diagnostics[gi];
    diag.resize(size);
    std::size_t kept = size;
    for (std::size_t i = 0; i < size; ++i) {
      diag[i].seq_kl = group.seq_kls[i];
      diag[i].effective_advantage = advantages[i];
      diag[i].filtered = filtered_variant && !(group.advantages[i] > 0.0 ||
                                               group.seq_kls[i] < config.kl_threshold);
      if (diag[i].filtered) --kept;
    }
    double group_scale = 1.0 / static_cast<double>(size);
    if (config.renormalize_filtered) {
      group_scale = kept > 0 ? 1.0 / static_cast<double>(kept) : 0.0;
    }

    auto& coeffs = out.token_coefficients[gi];
    coeffs.resize(size);
    for (std::size_t i = 0; i < size; ++i) {
      const Completion& c = group.completions[i];
      const std::vector<double>& detach = group.snapshot_logprobs[i];
      const std::size_t len = c.tokens.size();
      coeffs[i].assign(len, 0.0);
      ++completions;
      tokens += len;
      kl_sum += group.seq_kls[i];
      out.summary.max_kl = std::max(out.summary.max_kl, group.seq_kls[i]);
      if (diag[i].filtered) ++filtered;

      std::size_t trunc_here = 0;
      std::size_t clip_here = 0;
      if (truncating) {
        for (std::size_t t = 0; t < len; ++t) {
          if (std::exp(detach[t] - static_cast<double>(c.gen_logprobs[t])) >
              config.cap) {
            ++trunc_here;
          }
        }
      }
      if (advantages[i] != 0.0) {
        const std::vector<double> theta = theta_logprobs(gi, i);
        if (theta.size() != len) {
          throw InputError("batch_loss: live log-probs have wrong length");
        }
        const double scale =
            batch_scale * group_scale / static_cast<double>(len);
        for (std::size_t t = 0; t < len; ++t) {
          const PerTokenTerm term =
              per_token_objective(config, theta[t], detach[t],
                                  static_cast<double>(c.gen_logprobs[t]),
                                  advantages[i]);
          out.loss -= scale * term.objective_value;
          coeffs[i][t] = -scale * term.dcoeff;
          if (term.clipped) ++clip_here;
        }
      }
      truncated += trunc_here;
      clipped += clip_here;
      diag[i].truncated_fraction =
          static_cast<double>(trunc_here) / static_cast<double>(len);
      diag[i].clipped_fraction =
          static_cast<double>(clip_here) / static_cast<double>(len);
    }
  }

  out.summary.mean_kl = kl_sum / static_cast<double>(completions);
  out.summary.filtered_fraction =
      static_cast<double>(filtered) / static_cast<double>(completions);
  out.summary.truncated_fraction =
      static_cast<double>(truncated) / static_cast<double>(tokens);
  out.summary.clipped_fraction =
      static_cast<double>(clipped) / static_cast<double>(tokens);
  return out;
}

BatchLoss batch_loss(const VariantConfig& config, std::span<const Group> groups) {
  return batch_loss(config, groups, [&](std::size_t g, std::size_t i) {
    return groups[g].snapshot_logprobs[i];
  });
}

}  // namespace ftis::grpo
