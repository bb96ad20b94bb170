// Copyright 2026 The LTDR Authors. All Rights Reserved.
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

#include <gtest/gtest.h>

#include <cmath>

#include "ltdr/errors.hpp"
#include "ltdr/routing.hpp"
#include "test_util.hpp"

namespace ltdr {
namespace {

using testing::random_prob_rows;
using testing::random_tensor;

std::vector<TokenSelection> top_selection(std::span<const double> probs, std::size_t k_experts,
                                          int k) {
  std::vector<TokenSelection> out(probs.size() / k_experts);
  for (std::size_t t = 0; t < out.size(); ++t) {
    const auto row = probs.subspan(t * k_experts, k_experts);
    for (int e : select_topk(row, k)) out[t].push_back({e, row[e]});
  }
  return out;
}

TEST(Balancing, HandComputedTopOne) {
  const Tensor p = Tensor::from_values({2, 2}, {0.9, 0.1, 0.8, 0.2});
  const auto sel = top_selection(p.values(), 2, 1);
  const BalancingTerms terms = balancing_terms(p, sel, std::vector<std::uint8_t>(2, 1), 2.0);
  EXPECT_EQ(terms.dispatch_fraction, (std::vector<double>{1.0, 0.0}));
  EXPECT_NEAR(terms.mean_probability[0], 0.85, 1e-15);
  EXPECT_NEAR(terms.mean_probability[1], 0.15, 1e-15);
  EXPECT_NEAR(load_balancing_loss(p, sel).item(), 1.7, 1e-15);
}

TEST(Balancing, UniformProbabilitiesGiveOneForAnyDispatch) {
  Rng rng(3);
  for (std::size_t k_experts : {2u, 4u, 8u}) {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t m = 1 + rng.uniform_int(40);
      const Tensor p = Tensor::from_values(
          {m, k_experts}, std::vector<double>(m * k_experts, 1.0 / static_cast<double>(k_experts)));
      std::vector<TokenSelection> sel(m);
      for (auto& s : sel) {
        const int n = 1 + static_cast<int>(rng.uniform_int(k_experts));
        for (int j = 0; j < n; ++j) s.push_back({static_cast<int>(rng.uniform_int(k_experts)), 0.0});
      }
      EXPECT_NEAR(load_balancing_loss(p, sel).item(), 1.0, 1e-12);
    }
  }
}

TEST(Balancing, FractionsAndMeansSumToOne) {
  Rng rng(4);
  const auto probs = random_prob_rows(30, 4, rng);
  const Tensor p = Tensor::from_values({30, 4}, probs);
  const auto sel = top_selection(probs, 4, 2);
  const BalancingTerms t = balancing_terms(p, sel, std::vector<std::uint8_t>(30, 1), 4.0);
  double f = 0.0, g = 0.0;
  for (double v : t.dispatch_fraction) {
    EXPECT_GE(v, 0.0);
    f += v;
  }
  for (double v : t.mean_probability) g += v;
  EXPECT_NEAR(f, 1.0, 1e-15);
  EXPECT_NEAR(g, 1.0, 1e-15);
}

TEST(Balancing, EmptyBatchIsExactZeroWithoutGradient) {
  const Tensor p = Tensor::zeros({0, 4}, true);
  const Tensor loss = load_balancing_loss(p, {});
  EXPECT_EQ(loss.item(), 0.0);
  EXPECT_FALSE(loss.requires_grad());
}

TEST(Balancing, DuplicatingTheBatchChangesNothing) {
  Rng rng(5);
  const auto probs = random_prob_rows(12, 4, rng);
  auto twice = probs;
  twice.insert(twice.end(), probs.begin(), probs.end());
  const auto sel = top_selection(probs, 4, 2);
  auto sel2 = sel;
  sel2.insert(sel2.end(), sel.begin(), sel.end());
  const Tensor p1 = Tensor::from_values({12, 4}, probs);
  const Tensor p2 = Tensor::from_values({24, 4}, twice);
  const auto t1 = balancing_terms(p1, sel, std::vector<std::uint8_t>(12, 1), 4.0);
  const auto t2 = balancing_terms(p2, sel2, std::vector<std::uint8_t>(24, 1), 4.0);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(t1.dispatch_fraction[i], t2.dispatch_fraction[i], 1e-12);
    EXPECT_NEAR(t1.mean_probability[i], t2.mean_probability[i], 1e-12);
  }
  EXPECT_NEAR(t1.loss.item(), t2.loss.item(), 1e-12);
}

TEST(Balancing, GradientFlowsThroughMeanProbabilityOnly) {
  Rng rng(6);
  const Tensor logits = random_tensor({10, 4}, 7);
  const auto sel = top_selection(softmax_rows(logits).values(), 4, 2);
  EXPECT_LT(testing::worst_gradient_error(
                [&](const Tensor& l) { return load_balancing_loss(softmax_rows(l), sel); },
                logits),
            1e-6);
}

class LanguageOnly : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(10);
    probs = random_prob_rows(m, 4, rng);
    sel = top_selection(probs, 4, 2);
    mask = {0, 0, 1, 0, 1, 1, 0, 0, 1, 0};
  }
  std::size_t m = 10;
  std::vector<double> probs;
  std::vector<TokenSelection> sel;
  ModalityMask mask;
};

TEST_F(LanguageOnly, AllVisionIsZero) {
  const Tensor p = Tensor::from_values({m, 4}, probs, true);
  const Tensor loss = modality_balancing_loss(p, sel, ModalityMask(m, 0));
  EXPECT_EQ(loss.item(), 0.0);
}

TEST_F(LanguageOnly, AllLanguageEqualsFullLoss) {
  const Tensor p = Tensor::from_values({m, 4}, probs);
  EXPECT_EQ(modality_balancing_loss(p, sel, ModalityMask(m, 1)).item(),
            load_balancing_loss(p, sel).item());
}

TEST_F(LanguageOnly, MixedEqualsSubsetRecomputation) {
  std::vector<double> sub;
  std::vector<TokenSelection> sub_sel;
  for (std::size_t t = 0; t < m; ++t) {
    if (!mask[t]) continue;
    sub.insert(sub.end(), probs.begin() + t * 4, probs.begin() + t * 4 + 4);
    sub_sel.push_back(sel[t]);
  }
  const Tensor p = Tensor::from_values({m, 4}, probs);
  const Tensor ps = Tensor::from_values({sub_sel.size(), 4}, sub);
  EXPECT_NEAR(modality_balancing_loss(p, sel, mask).item(), load_balancing_loss(ps, sub_sel).item(),
              1e-15);
}

TEST_F(LanguageOnly, LiteralFormDropsTheExpertCountFactor) {
  const Tensor p = Tensor::from_values({m, 4}, probs);
  EXPECT_NEAR(modality_balancing_loss(p, sel, mask, true).item() * 4.0,
              modality_balancing_loss(p, sel, mask, false).item(), 1e-15);
}

TEST_F(LanguageOnly, VisionLogitsGetExactlyZeroGradient) {
  Tensor logits = random_tensor({m, 4}, 11);
  backward(modality_balancing_loss(softmax_rows(logits), sel, mask));
  bool language_nonzero = false;
  for (std::size_t t = 0; t < m; ++t)
    for (std::size_t j = 0; j < 4; ++j) {
      const double g = logits.grad()[t * 4 + j];
      if (!mask[t]) {
        EXPECT_EQ(g, 0.0) << "token " << t;
      } else {
        language_nonzero = language_nonzero || g != 0.0;
      }
    }
  EXPECT_TRUE(language_nonzero);
}

TEST_F(LanguageOnly, VisionOnlyIsTheMirrorImage) {
  ModalityMask flipped(mask);
  for (auto& v : flipped) v = !v;
  const Tensor p = Tensor::from_values({m, 4}, probs);
  EXPECT_EQ(vision_balancing_loss(p, sel, mask).item(),
            modality_balancing_loss(p, sel, flipped).item());
}

TEST(Rpv, OneHotAndUniformRows) {
  for (std::size_t k : {2u, 4u, 8u}) {
    std::vector<double> one_hot(2 * k, 0.0), uniform(k, 1.0 / static_cast<double>(k));
    one_hot[0] = 1.0;
    one_hot[k + k - 1] = 1.0;
    const double expect = static_cast<double>(k - 1) / static_cast<double>(k * k);
    for (double v : routing_probability_variance(Tensor::from_values({2, k}, one_hot))) {
      EXPECT_EQ(v, expect) << "K = " << k;
    }
    EXPECT_EQ(routing_probability_variance(Tensor::from_values({1, k}, uniform))[0], 0.0);
  }
  EXPECT_EQ(3.0 / 16.0, 0.1875);
}

TEST(Rpv, MatchesDifferentiableVariance) {
  Rng rng(12);
  const auto probs = random_prob_rows(20, 4, rng);
  const Tensor p = Tensor::from_values({20, 4}, probs);
  const auto rpv = routing_probability_variance(p);
  const Tensor v = variance_rows(p);
  for (std::size_t t = 0; t < 20; ++t) EXPECT_NEAR(rpv[t], v.at(t), 1e-17);
}

TEST(TailClassification, EqualRpvSelectsNothing) {
  const std::vector<double> rpv(12, 0.0731234);
  const ModalityMask mask(12, 0);
  const auto tail = classify_vision_tokens(rpv, mask, TailSelector::kVisionTail);
  EXPECT_EQ(std::count(tail.begin(), tail.end(), 1), 0);
  const auto head = classify_vision_tokens(rpv, mask, TailSelector::kVisionHead);
  EXPECT_EQ(std::count(head.begin(), head.end(), 1), 12);
}

TEST(TailClassification, EqualRowsFromProbabilities) {
  std::vector<double> probs;
  for (int t = 0; t < 9; ++t) probs.insert(probs.end(), {0.61, 0.2, 0.09, 0.1});
  const auto tail = classify_vision_tokens(Tensor::from_values({9, 4}, probs), ModalityMask(9, 0),
                                           TailSelector::kVisionTail);
  EXPECT_EQ(std::count(tail.begin(), tail.end(), 1), 0);
}

TEST(TailClassification, StrictThresholdAndComplement) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + rng.uniform_int(50);
    std::vector<double> rpv(m);
    ModalityMask mask(m);
    for (std::size_t t = 0; t < m; ++t) {
      rpv[t] = 0.1875 * rng.uniform();
      mask[t] = rng.uniform() < 0.25;
    }
    const auto vtt = classify_vision_tokens(rpv, mask, TailSelector::kVisionTail);
    const auto vht = classify_vision_tokens(rpv, mask, TailSelector::kVisionHead);
    const auto none = classify_vision_tokens(rpv, mask, TailSelector::kNone);
    const double mean = mean_vision_rpv(rpv, mask);
    for (std::size_t t = 0; t < m; ++t) {
      EXPECT_EQ(none[t], 0);
      if (mask[t]) {
        EXPECT_EQ(vtt[t], 0);
        EXPECT_EQ(vht[t], 0);
      } else {
        EXPECT_EQ(vtt[t] + vht[t], 1);
        EXPECT_EQ(vtt[t] == 1, rpv[t] > mean);
      }
    }
  }
}

TEST(TailClassification, TokenAtTheMeanIsHead) {
  const std::vector<double> rpv{0.0, 0.1, 0.2};
  const auto vtt = classify_vision_tokens(rpv, ModalityMask(3, 0), TailSelector::kVisionTail);
  EXPECT_EQ(vtt, (TokenFlags{0, 0, 1}));
}

TEST(TotalLoss, ArmsAndAlpha) {
  Rng rng(14);
  const std::size_t m = 8;
  const Tensor task = Tensor::scalar(0.7);
  const Tensor uniform = Tensor::from_values({m, 4}, std::vector<double>(m * 4, 0.25));
  const auto sel = top_selection(uniform.values(), 4, 2);
  const std::vector<LayerRouting> layers{{uniform, sel}, {uniform, sel}};
  ModalityMask mask(m, 0);
  mask[5] = mask[6] = 1;

  MoEConfig c;
  c.alpha = 0.0;
  EXPECT_TRUE(total_auxiliary_loss(task, layers, mask, c).same_node(task));
  c.alpha = 0.5;
  c.balancing = BalancingScope::kNone;
  EXPECT_TRUE(total_auxiliary_loss(task, layers, mask, c).same_node(task));
  c.balancing = BalancingScope::kAllTokens;
  EXPECT_NEAR(total_auxiliary_loss(task, layers, mask, c).item(), 0.7 + 0.5 * 2.0, 1e-12);
  c.balancing = BalancingScope::kLanguageOnly;
  EXPECT_NEAR(total_auxiliary_loss(task, layers, mask, c).item(), 0.7 + 0.5 * 2.0, 1e-12);
}

}  // namespace
}  // namespace ltdr
