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

#include <cmath>
#include <limits>
#include <vector>

#include "ftis/errors.h"
#include "ftis/oracle.h"
#include "generators.h"
#include "gtest/gtest.h"

namespace {

using ::ftis::Rng;
namespace grpo = ::ftis::grpo;
namespace oracle = ::ftis::oracle;
namespace t = ::ftis::testing;
using grpo::Variant;

grpo::VariantConfig config_for(Variant v) {
  grpo::VariantConfig c;
  c.variant = v;
  return c;
}

TEST(AdvantageTest, OneWinnerAmongFour) {
  const std::vector<double> r = {1, 0, 0, 0};
  const auto a = grpo::group_advantages(r);
  // mean 1/4, population sd sqrt(3)/4.
  EXPECT_NEAR(a[0], std::sqrt(3.0), 1e-12);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(a[i], -1.0 / std::sqrt(3.0), 1e-12);
}

TEST(AdvantageTest, ConstantRewardsGiveZeros) {
  for (double v : {0.0, 1.0, -2.5}) {
    const std::vector<double> r(5, v);
    for (double a : grpo::group_advantages(r)) EXPECT_EQ(a, 0.0);
  }
}

TEST(AdvantageTest, NeedsTwoRewards) {
  const std::vector<double> one = {1.0};
  EXPECT_THROW(grpo::group_advantages(one), ftis::InputError);
}

TEST(AdvantageTest, StandardizedOnRandomLists) {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto r = t::random_rewards(rng, t::between(rng, 2, 24));
    const auto a = grpo::group_advantages(r);
    double mean = 0.0, sq = 0.0;
    for (double x : a) mean += x;
    mean /= a.size();
    for (double x : a) sq += (x - mean) * (x - mean);
    EXPECT_LT(std::abs(mean), 1e-9);
    EXPECT_NEAR(std::sqrt(sq / a.size()), 1.0, 1e-9);
  }
}

TEST(SequenceKlTest, KnownValues) {
  const std::vector<double> same = {-1.0, -0.5};
  const std::vector<float> gen = {-1.0f, -0.5f};
  EXPECT_EQ(grpo::sequence_kl_estimate(same, gen), 0.0);
  // One token with log-ratio 1: e - 1 - 1.
  const std::vector<double> train = {-1.0};
  const std::vector<float> gen2 = {-2.0f};
  EXPECT_NEAR(grpo::sequence_kl_estimate(train, gen2), std::exp(1.0) - 2.0, 1e-12);
}

TEST(SequenceKlTest, NonNegativeAndAdditive) {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> train;
    std::vector<float> gen;
    double parts = 0.0;
    for (std::size_t i = 0; i < t::between(rng, 1, 10); ++i) {
      train.push_back(-t::uniform(rng, 0.0, 6.0));
      gen.push_back(static_cast<float>(-t::uniform(rng, 0.0, 6.0)));
      parts += grpo::sequence_kl_estimate(std::vector<double>{train.back()},
                                          std::vector<float>{gen.back()});
    }
    const double kl = grpo::sequence_kl_estimate(train, gen);
    EXPECT_GE(kl, 0.0);
    EXPECT_NEAR(kl, parts, 1e-9 * std::max(1.0, kl));
  }
}

TEST(SequenceKlTest, LengthMismatchThrows) {
  EXPECT_THROW(grpo::sequence_kl_estimate(std::vector<double>{-1.0},
                                          std::vector<float>{}),
               ftis::InputError);
}

TEST(FilterTest, CaseSplit) {
  const std::vector<double> adv = {1.0, -1.0, -1.0, 0.0, 2.0};
  const std::vector<double> kl = {100.0, 100.0, 10.0, 100.0, 0.0};
  const auto out = grpo::filtered_advantages(adv, kl, 50.0);
  EXPECT_EQ(out, (std::vector<double>{1.0, 0.0, -1.0, 0.0, 2.0}));
}

TEST(FilterTest, BoundaryIsExclusive) {
  const std::vector<double> adv = {-1.0};
  const std::vector<double> kl = {50.0};
  EXPECT_EQ(grpo::filtered_advantages(adv, kl, 50.0)[0], 0.0);
}

TEST(FilterTest, KeptIffPositiveOrBelowThreshold) {
  Rng rng(3);
  for (int trial = 0; trial < 5000; ++trial) {
    const double a = t::uniform(rng, -3.0, 3.0) * (rng.below(5) == 0 ? 0.0 : 1.0);
    const double k = t::uniform(rng, 0.0, 200.0);
    const double g = t::uniform(rng, 0.1, 200.0);
    const auto out = grpo::filtered_advantages(std::vector<double>{a},
                                               std::vector<double>{k}, g);
    const bool kept = a > 0.0 || k < g;
    EXPECT_EQ(out[0], kept ? a : 0.0);
  }
}

TEST(TruncationTest, TwoNatsCapsAtTwo) {
  const auto w = grpo::truncated_is_weights(std::vector<double>{-1.0},
                                            std::vector<float>{-3.0f}, 2.0);
  EXPECT_EQ(w[0], 2.0);
}

TEST(TruncationTest, BelowCapIsTheRatio) {
  const auto w = grpo::truncated_is_weights(std::vector<double>{-2.0},
                                            std::vector<float>{-1.5f}, 2.0);
  EXPECT_NEAR(w[0], std::exp(-0.5), 1e-15);
}

TEST(TruncationTest, NeverAboveCap) {
  Rng rng(4);
  for (int trial = 0; trial < 5000; ++trial) {
    const double cap = t::uniform(rng, 1.0, 5.0);
    const double train = -t::uniform(rng, 0.0, 20.0);
    const float gen = static_cast<float>(-t::uniform(rng, 0.0, 20.0));
    const auto w = grpo::truncated_is_weights(std::vector<double>{train},
                                              std::vector<float>{gen}, cap);
    EXPECT_LE(w[0], cap);
    EXPECT_GE(w[0], 0.0);
  }
}

TEST(PerTokenObjectiveTest, ClipBranches) {
  auto c = config_for(Variant::kNoIS);
  const double up = std::log(1.5), down = std::log(0.5);
  // ratio 1.5, A = +1: clipped to 1.2, flat.
  auto r = grpo::per_token_objective(c, up, 0.0, 0.0, 1.0);
  EXPECT_NEAR(r.objective_value, 1.2, 1e-12);
  EXPECT_EQ(r.dcoeff, 0.0);
  EXPECT_TRUE(r.clipped);
  // ratio 0.5, A = +1: unclipped branch is smaller.
  r = grpo::per_token_objective(c, down, 0.0, 0.0, 1.0);
  EXPECT_NEAR(r.objective_value, 0.5, 1e-12);
  EXPECT_NEAR(r.dcoeff, 0.5, 1e-12);
  EXPECT_FALSE(r.clipped);
  // ratio 0.5, A = -1: clipped at 0.8.
  r = grpo::per_token_objective(c, down, 0.0, 0.0, -1.0);
  EXPECT_NEAR(r.objective_value, -0.8, 1e-12);
  EXPECT_EQ(r.dcoeff, 0.0);
  // ratio 1.5, A = -1: unclipped.
  r = grpo::per_token_objective(c, up, 0.0, 0.0, -1.0);
  EXPECT_NEAR(r.objective_value, -1.5, 1e-12);
  EXPECT_NEAR(r.dcoeff, -1.5, 1e-12);
}

TEST(PerTokenObjectiveTest, RatioDenominatorPerVariant) {
  // theta -1, snapshot -1.2, generator -1.5.
  const double th = -1.0, snap = -1.2, gen = -1.5, adv = 0.1;
  const double eps_free = 0.9;
  for (Variant v : grpo::kAllVariants) {
    auto c = config_for(v);
    c.epsilon = eps_free;
    c.cap = 100.0;
    const auto r = grpo::per_token_objective(c, th, snap, gen, adv);
    const double ratio = std::exp(th - (grpo::uses_generator_ratio(v) ? gen : snap));
    const double weight = grpo::uses_truncation(v) ? std::exp(snap - gen) : 1.0;
    EXPECT_NEAR(r.objective_value, weight * ratio * adv, 1e-12) << grpo::to_string(v);
  }
}

TEST(PerTokenObjectiveTest, ZeroAdvantageContributesNothing) {
  for (Variant v : grpo::kAllVariants) {
    const auto r = grpo::per_token_objective(config_for(v), -0.3, -2.0, -5.0, 0.0);
    EXPECT_EQ(r.objective_value, 0.0);
    EXPECT_EQ(r.dcoeff, 0.0);
  }
}

TEST(PerTokenObjectiveTest, NonFiniteInputThrows) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  const auto c = config_for(Variant::kFTIS);
  EXPECT_THROW(grpo::per_token_objective(c, nan, -1, -1, 1), ftis::NumericError);
  EXPECT_THROW(grpo::per_token_objective(c, -1, -inf, -1, 1), ftis::NumericError);
  EXPECT_THROW(grpo::per_token_objective(c, -1, -1, nan, 1), ftis::NumericError);
  EXPECT_THROW(grpo::per_token_objective(c, -1, -1, -1, inf), ftis::NumericError);
}

TEST(VariantTest, NamesRoundTrip) {
  for (Variant v : grpo::kAllVariants) {
    EXPECT_EQ(grpo::parse_variant(grpo::to_string(v)), v);
  }
  EXPECT_EQ(grpo::parse_variant("f-tis"), Variant::kFTIS);
  EXPECT_EQ(grpo::parse_variant("fnois"), Variant::kFNoIS);
  EXPECT_THROW(grpo::parse_variant("ppo"), ftis::ConfigError);
}

TEST(VariantTest, ConfigValidation) {
  grpo::VariantConfig c;
  EXPECT_NO_THROW(grpo::validate(c));
  c.epsilon = 0.0;
  EXPECT_THROW(grpo::validate(c), ftis::ConfigError);
  c = {};
  c.cap = 0.5;
  EXPECT_THROW(grpo::validate(c), ftis::ConfigError);
  c = {};
  c.kl_threshold = 0.0;
  EXPECT_THROW(grpo::validate(c), ftis::ConfigError);
}

TEST(BatchLossTest, MatchesNaiveLoss) {
  Rng rng(5);
  for (Variant v : grpo::kAllVariants) {
    for (int trial = 0; trial < 300; ++trial) {
      t::SyntheticKnobs k;
      k.off_policy = t::uniform(rng, 0.0, 3.0);
      auto batch = t::synthetic_batch(rng, k);
      auto c = config_for(v);
      c.kl_threshold = t::uniform(rng, 0.05, 10.0);
      c.cap = t::uniform(rng, 1.0, 3.0);
      c.detach_truncation = rng.below(2) == 0;
      c.renormalize_filtered = rng.below(2) == 0;
      const double fast =
          grpo::batch_loss(c, batch.groups, [&](std::size_t g, std::size_t i) {
            return batch.theta[g][i];
          }).loss;
      const double slow = oracle::naive_loss(c, batch.groups, batch.theta);
      EXPECT_NEAR(fast, slow, 1e-9) << grpo::to_string(v) << " trial " << trial;
    }
  }
}

TEST(BatchLossTest, CoefficientsAreLossDerivatives) {
  Rng rng(6);
  for (Variant v : grpo::kAllVariants) {
    int checked = 0;
    for (int trial = 0; trial < 400 && checked < 60; ++trial) {
      t::SyntheticKnobs k;
      k.max_groups = 2;
      k.max_group_size = 4;
      k.max_len = 4;
      auto batch = t::synthetic_batch(rng, k);
      auto c = config_for(v);
      c.kl_threshold = t::uniform(rng, 0.1, 5.0);
      c.detach_truncation = rng.below(2) == 0;
      if (t::near_kink(c, batch.groups, batch.theta, 1e-2)) continue;
      const auto loss = grpo::batch_loss(c, batch.groups, [&](std::size_t g, std::size_t i) {
        return batch.theta[g][i];
      });
      std::vector<double> flat, analytic;
      for (std::size_t g = 0; g < batch.theta.size(); ++g) {
        for (std::size_t i = 0; i < batch.theta[g].size(); ++i) {
          for (std::size_t s = 0; s < batch.theta[g][i].size(); ++s) {
            flat.push_back(batch.theta[g][i][s]);
            analytic.push_back(loss.token_coefficients[g][i][s]);
          }
        }
      }
      const auto numeric = oracle::finite_diff_gradient(
          [&](std::span<const double> x) {
            t::Theta th = batch.theta;
            std::size_t at = 0;
            for (auto& grp : th)
              for (auto& seq : grp)
                for (double& lp : seq) lp = x[at++];
            return oracle::naive_loss(c, batch.groups, th);
          },
          flat, 1e-6);
      EXPECT_LT(t::relative_error(analytic, numeric, 1e-9), 1e-5)
          << grpo::to_string(v) << " trial " << trial;
      ++checked;
    }
    EXPECT_GE(checked, 50) << grpo::to_string(v);
  }
}

TEST(BatchLossTest, OnPolicyAllVariantsAgree) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    t::SyntheticKnobs k;
    auto batch = t::synthetic_batch(rng, k);
    for (std::size_t g = 0; g < batch.groups.size(); ++g) {
      auto& group = batch.groups[g];
      for (std::size_t i = 0; i < group.completions.size(); ++i) {
        const auto& gen = group.completions[i].gen_logprobs;
        group.snapshot_logprobs[i].assign(gen.begin(), gen.end());
      }
      t::finish_group(group);
    }
    const auto provider = [&](std::size_t g, std::size_t i) { return batch.theta[g][i]; };
    const auto ref = grpo::batch_loss(config_for(Variant::kNoIS), batch.groups, provider);
    for (Variant v : grpo::kAllVariants) {
      const auto other = grpo::batch_loss(config_for(v), batch.groups, provider);
      EXPECT_NEAR(other.loss, ref.loss, 1e-12);
      EXPECT_EQ(other.token_coefficients, ref.token_coefficients) << grpo::to_string(v);
      EXPECT_EQ(other.summary.filtered_fraction, 0.0);
      EXPECT_EQ(other.summary.truncated_fraction, 0.0);
    }
  }
}

TEST(BatchLossTest, HugeThresholdRestoresUnfilteredLoss) {
  Rng rng(8);
  const std::pair<Variant, Variant> pairs[] = {{Variant::kFNoIS, Variant::kNoIS},
                                               {Variant::kFVIS, Variant::kVIS},
                                               {Variant::kFTIS, Variant::kTIS}};
  for (int trial = 0; trial < 300; ++trial) {
    t::SyntheticKnobs k;
    k.off_policy = 3.0;
    auto batch = t::synthetic_batch(rng, k);
    const auto provider = [&](std::size_t g, std::size_t i) { return batch.theta[g][i]; };
    for (const auto& [filtered, plain] : pairs) {
      auto cf = config_for(filtered);
      cf.kl_threshold = std::numeric_limits<double>::infinity();
      const auto a = grpo::batch_loss(cf, batch.groups, provider);
      const auto b = grpo::batch_loss(config_for(plain), batch.groups, provider);
      EXPECT_EQ(a.loss, b.loss);
      EXPECT_EQ(a.token_coefficients, b.token_coefficients);
    }
  }
}

TEST(BatchLossTest, FilteringKeepsGroupStatistics) {
  Rng rng(9);
  int saw_filtered = 0;
  for (int trial = 0; trial < 300; ++trial) {
    t::SyntheticKnobs k;
    k.off_policy = 3.0;
    auto batch = t::synthetic_batch(rng, k);
    auto c = config_for(Variant::kFTIS);
    c.kl_threshold = 2.0;
    const auto out = grpo::batch_loss(c, batch.groups);
    for (std::size_t g = 0; g < batch.groups.size(); ++g) {
      const auto& group = batch.groups[g];
      const auto unfiltered = grpo::group_advantages(group.rewards);
      for (std::size_t i = 0; i < group.completions.size(); ++i) {
        const auto& d = out.diagnostics[g][i];
        if (d.filtered) {
          ++saw_filtered;
          EXPECT_EQ(d.effective_advantage, 0.0);
          EXPECT_LE(unfiltered[i], 0.0);
          EXPECT_GE(d.seq_kl, c.kl_threshold);
        } else {
          // Survivors keep the advantage computed over the whole group.
          EXPECT_EQ(d.effective_advantage, unfiltered[i]);
        }
      }
    }
  }
  EXPECT_GT(saw_filtered, 100);
}

TEST(BatchLossTest, ZeroAdvantageBatchIsZero) {
  Rng rng(10);
  t::SyntheticKnobs k;
  k.constant_rewards = true;
  for (int trial = 0; trial < 50; ++trial) {
    auto batch = t::synthetic_batch(rng, k);
    for (Variant v : grpo::kAllVariants) {
      const auto out = grpo::batch_loss(config_for(v), batch.groups);
      EXPECT_EQ(out.loss, 0.0);
      EXPECT_EQ(oracle::naive_loss(config_for(v), batch.groups), 0.0);
    }
  }
}

TEST(BatchLossTest, RenormalizationRescalesByKeptCount) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    t::SyntheticKnobs k;
    k.min_groups = k.max_groups = 1;
    k.off_policy = 3.0;
    auto batch = t::synthetic_batch(rng, k);
    auto c = config_for(Variant::kFNoIS);
    c.kl_threshold = 1.0;
    const auto plain = grpo::batch_loss(c, batch.groups);
    c.renormalize_filtered = true;
    const auto renorm = grpo::batch_loss(c, batch.groups);
    std::size_t kept = 0;
    for (const auto& d : plain.diagnostics[0]) kept += d.filtered ? 0 : 1;
    const double size = static_cast<double>(batch.groups[0].completions.size());
    if (kept == 0) {
      EXPECT_EQ(renorm.loss, 0.0);
    } else {
      EXPECT_NEAR(renorm.loss, plain.loss * size / kept, 1e-12);
    }
  }
}

TEST(BatchLossTest, SummaryFractions) {
  // One group, two single-token completions; one is truncated and clipped.
  grpo::Group g;
  g.prompt = {1};
  g.rewards = {1.0, 0.0};
  for (int i = 0; i < 2; ++i) {
    ftis::Completion c;
    c.tokens = {2};
    c.gen_logprobs = {-3.0f};
    g.completions.push_back(c);
  }
  g.snapshot_logprobs = {{-0.5}, {-2.9}};
  t::finish_group(g);
  auto c = config_for(Variant::kTIS);
  const std::vector<std::vector<double>> live = {{0.0}, {-2.9}};
  const auto out = grpo::batch_loss(c, std::vector<grpo::Group>{g},
                                    [&](std::size_t, std::size_t i) { return live[i]; });
  EXPECT_DOUBLE_EQ(out.summary.truncated_fraction, 0.5);
  EXPECT_DOUBLE_EQ(out.summary.clipped_fraction, 0.5);
  EXPECT_DOUBLE_EQ(out.summary.max_kl, g.seq_kls[0]);
  EXPECT_DOUBLE_EQ(out.summary.mean_kl, (g.seq_kls[0] + g.seq_kls[1]) / 2);
}

TEST(BatchLossTest, RejectsMalformedInput) {
  const auto c = config_for(Variant::kNoIS);
  EXPECT_THROW(grpo::batch_loss(c, std::vector<grpo::Group>{}), ftis::InputError);

  grpo::Group g;
  g.prompt = {1};
  g.rewards = {1.0};
  ftis::Completion comp;
  comp.tokens = {2};
  comp.gen_logprobs = {-1.0f};
  g.completions = {comp};
  g.snapshot_logprobs = {{-1.0}};
  g.advantages = {0.0};
  g.seq_kls = {0.0};
  EXPECT_THROW(grpo::batch_loss(c, std::vector<grpo::Group>{g}), ftis::InputError);

  g.completions.push_back(comp);
  g.rewards.push_back(0.0);
  g.snapshot_logprobs.push_back({-1.0, -2.0});  // wrong length
  g.advantages = {1.0, -1.0};
  g.seq_kls = {0.0, 0.0};
  EXPECT_THROW(grpo::batch_loss(c, std::vector<grpo::Group>{g}), ftis::InputError);
}

}  // namespace
