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
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ltdr/errors.hpp"
#include "ltdr/metrics.hpp"
#include "ltdr/routing.hpp"
#include "ltdr/train.hpp"
#include "test_util.hpp"

namespace ltdr {
namespace {

using testing::random_prob_rows;
using testing::slurp;

// A record whose routing follows the real dispatch rules on random rows.
RouterRecord make_record(std::size_t m, int layer, std::uint64_t seed) {
  Rng rng(seed);
  RouterRecord r;
  r.layer = layer;
  r.batch = static_cast<int>(seed);
  r.vision_concepts = 4;
  r.background_concepts = {0};
  r.modality.resize(m);
  r.labels.resize(m);
  r.predictions.resize(m);
  for (std::size_t t = 0; t < m; ++t) {
    r.modality[t] = t >= m * 3 / 4;
    r.labels[t] = r.modality[t] ? 4 + static_cast<int>(rng.uniform_int(4))
                                : static_cast<int>(rng.uniform_int(4));
    r.predictions[t] = rng.uniform() < 0.8 ? r.labels[t] : static_cast<int>(rng.uniform_int(8));
  }
  r.routing.num_experts = 4;
  r.routing.probs = random_prob_rows(m, 4, rng);
  r.routing.rpv = routing_probability_variance(Tensor::from_values({m, 4}, r.routing.probs));
  r.routing.tail_flags = classify_vision_tokens(r.routing.rpv, r.modality, TailSelector::kVisionTail);
  MoEConfig c;
  r.routing.selection = plan_dispatch(r.routing.probs, 4, c, r.modality, r.routing.tail_flags);
  return r;
}

TEST(ExpertLoading, UniformProbabilitiesLoadTheFirstTwoExperts) {
  RouterRecord r = make_record(8, 0, 1);
  r.routing.probs.assign(8 * 4, 0.25);
  r.routing.tail_flags.assign(8, 0);
  r.routing.selection = plan_dispatch(r.routing.probs, 4, MoEConfig{}, r.modality,
                                      r.routing.tail_flags);
  const std::vector<RouterRecord> recs{r};
  const ExpertLoad load = expert_loading(recs);
  EXPECT_EQ(load[0][kLanguageSlice], (std::vector<long long>{2, 2, 0, 0}));
  EXPECT_EQ(load[0][kVisionSlice], (std::vector<long long>{6, 6, 0, 0}));
}

TEST(ExpertLoading, EmptyDatasetIsAllZero) {
  EXPECT_TRUE(expert_loading({}).empty());
}

TEST(ExpertLoading, MatchesBruteForceRecount) {
  std::vector<RouterRecord> recs;
  for (int b = 0; b < 5; ++b)
    for (int l = 0; l < 2; ++l) recs.push_back(make_record(40, l, 100 + b * 2 + l));
  const ExpertLoad load = expert_loading(recs);
  long long brute[2][2][4] = {};
  for (const auto& r : recs)
    for (std::size_t t = 0; t < r.modality.size(); ++t)
      for (const auto& s : r.routing.selection[t]) ++brute[r.layer][r.modality[t]][s.expert];
  for (int l = 0; l < 2; ++l)
    for (int m = 0; m < 2; ++m)
      for (int e = 0; e < 4; ++e) EXPECT_EQ(load[l][m][e], brute[l][m][e]);
}

TEST(LoadRatio, Values) {
  const std::vector<long long> a{10, 20, 5}, zero{0, 3}, none{0, 0};
  EXPECT_EQ(load_ratio(a), 4.0);
  EXPECT_TRUE(std::isinf(load_ratio(zero)));
  EXPECT_TRUE(std::isnan(load_ratio(none)));
}

TEST(RpvHistogram, DegenerateAndOneHot) {
  const std::vector<double> zeros(7, 0.0);
  const auto h0 = rpv_histogram(zeros, 4);
  ASSERT_EQ(h0.size(), 19u);  // ceil(0.1875 / 0.01)
  EXPECT_EQ(h0[0], 7);
  const std::vector<double> one_hot(5, 0.1875);
  const auto h1 = rpv_histogram(one_hot, 4);
  EXPECT_EQ(h1[18], 5);
}

TEST(RpvHistogram, PartitionAndRightOpenBins) {
  Rng rng(2);
  std::vector<double> v(500);
  for (double& x : v) x = 0.1875 * rng.uniform();
  v.push_back(0.01);  // lands in bin 1, not bin 0
  const auto h = rpv_histogram(v, 4);
  long long total = 0;
  for (long long c : h) total += c;
  EXPECT_EQ(total, 501);
  const std::vector<double> edge{0.01};
  EXPECT_EQ(rpv_histogram(edge, 4)[1], 1);
}

TEST(RpvHistogram, Errors) {
  const std::vector<double> neg{-0.001};
  EXPECT_THROW(rpv_histogram(neg, 4), ContractError);
  const std::vector<double> ok{0.0};
  EXPECT_THROW(rpv_histogram(ok, 4, 0.0), ContractError);
}

TEST(TailFraction, Values) {
  EXPECT_EQ(tail_fraction(TokenFlags{0, 0, 1}, ModalityMask{0, 0, 0}), 1.0 / 3.0);
  EXPECT_EQ(tail_fraction(TokenFlags{0, 0}, ModalityMask{1, 1}), 0.0);
  const std::vector<double> rpv(6, 0.05);
  const ModalityMask mask(6, 0);
  EXPECT_EQ(tail_fraction(classify_vision_tokens(rpv, mask, TailSelector::kVisionTail), mask), 0.0);
}

TEST(TailFraction, RightSkewedSampleIsBelowHalf) {
  Rng rng(3);
  std::vector<double> rpv(2000);
  for (double& x : rpv) x = -0.02 * std::log(1.0 - rng.uniform());
  const ModalityMask mask(rpv.size(), 0);
  EXPECT_LT(tail_fraction(classify_vision_tokens(rpv, mask, TailSelector::kVisionTail), mask), 0.5);
}

TEST(Specialization, EntropyValues) {
  auto sel = [](std::initializer_list<int> experts) {
    std::vector<TokenSelection> s;
    for (int e : experts) s.push_back({{e, 0.5}, {(e + 1) % 4, 0.2}});
    return s;
  };
  const std::vector<int> labels{3, 3, 3, 3};
  EXPECT_EQ(specialization_score(sel({1, 1, 1, 1}), labels).at(3), 0.0);
  EXPECT_NEAR(specialization_score(sel({0, 1, 2, 3}), labels).at(3), 2.0, 1e-15);
  EXPECT_NEAR(specialization_score(sel({0, 0, 1, 1}), labels).at(3), 1.0, 1e-15);
  EXPECT_EQ(specialization_score(sel({0, 0, 1, 1}), labels).count(2), 0u);
  // Counting every slot of (e, e+1) for e in {1, 1}: experts 1 and 2 half each.
  EXPECT_NEAR(specialization_score(sel({1, 1}), std::vector<int>{5, 5}, true).at(5), 1.0, 1e-15);
  EXPECT_THROW(specialization_score(sel({1}), labels), DimensionError);
}

TEST(RunStats, Invariants) {
  std::vector<RouterRecord> recs;
  for (int b = 0; b < 6; ++b)
    for (int l = 0; l < 2; ++l) recs.push_back(make_record(64, l, 200 + b * 2 + l));
  const RunStats s = compute_run_stats(recs);
  EXPECT_EQ(s.num_layers, 2);
  EXPECT_GE(s.mean_rpv_tail, s.mean_rpv_head);
  EXPECT_GE(s.tail_fraction, 0.0);
  EXPECT_LE(s.tail_fraction, 1.0);
  for (int l = 0; l < 2; ++l)
    for (int m = 0; m < 2; ++m) {
      long long tokens = 0, slots = 0, hist = 0;
      for (const auto& r : recs) {
        if (r.layer != l) continue;
        for (std::size_t t = 0; t < r.modality.size(); ++t) {
          if (r.modality[t] != m) continue;
          ++tokens;
          slots += static_cast<long long>(r.routing.selection[t].size());
        }
      }
      long long load = 0;
      for (long long c : s.expert_load[l][m]) load += c;
      for (long long c : s.rpv_histogram[l][m]) hist += c;
      EXPECT_EQ(load, slots);
      EXPECT_EQ(hist, tokens);
    }
  // Accuracy uses one layer's records: 6 batches x 64 tokens.
  EXPECT_EQ(s.evaluated_tokens, 6 * 64);
}

TEST(RunStats, AccuracySplitsHeadAndTailConcepts) {
  RouterRecord r = make_record(8, 0, 5);
  r.labels = {0, 0, 1, 2, 3, 0, 4, 5};
  r.modality = {0, 0, 0, 0, 0, 0, 1, 1};
  r.predictions = {0, 1, 1, 2, 0, 0, 4, 6};
  r.routing.tail_flags = classify_vision_tokens(r.routing.rpv, r.modality, TailSelector::kVisionTail);
  const std::vector<RouterRecord> recs{r};
  const RunStats s = compute_run_stats(recs);
  EXPECT_NEAR(s.accuracy_head_concepts, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.accuracy_tail_concepts, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.accuracy_language, 0.5, 1e-15);
  EXPECT_NEAR(s.accuracy_overall, 5.0 / 8.0, 1e-15);
}

TEST(Serialization, JsonLineRoundTripIsExact) {
  const RouterRecord r = make_record(33, 1, 7);
  const RouterRecord back = record_from_json_line(record_to_json_line(r));
  EXPECT_EQ(back.batch, r.batch);
  EXPECT_EQ(back.layer, r.layer);
  EXPECT_EQ(back.routing.probs, r.routing.probs);
  EXPECT_EQ(back.routing.rpv, r.routing.rpv);
  EXPECT_EQ(back.routing.tail_flags, r.routing.tail_flags);
  EXPECT_EQ(back.routing.selection, r.routing.selection);
  EXPECT_EQ(back.modality, r.modality);
  EXPECT_EQ(back.labels, r.labels);
  EXPECT_EQ(back.predictions, r.predictions);
  EXPECT_EQ(back.background_concepts, r.background_concepts);
  EXPECT_EQ(record_to_json_line(back), record_to_json_line(r));
}

TEST(Serialization, MalformedLineIsIoError) {
  EXPECT_THROW(record_from_json_line("{not json"), IoError);
  EXPECT_THROW(record_from_json_line("{}"), IoError);
}

TEST(Serialization, StatsRecomputedFromLogAreIdentical) {
  ExperimentConfig c;
  c.steps = 5;
  c.eval_batches = 2;
  const ExperimentResult r = run_experiment(c);
  std::stringstream log;
  write_router_log(log, r.records);
  const auto back = read_router_log(log);
  ASSERT_EQ(back.size(), r.records.size());
  const RunStats s2 = compute_run_stats(back);

  const auto dir = std::filesystem::path(::testing::TempDir()) / "ltdr_stats_roundtrip";
  std::filesystem::remove_all(dir);
  write_stats_csv(dir / "a", r.stats);
  write_stats_csv(dir / "b", s2);
  for (const char* f : {"expert_load.csv", "rpv_histogram.csv", "specialization.csv", "summary.csv"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  EXPECT_EQ(slurp(dir / "a" / "expert_load.csv").rfind("layer,modality,expert,count\n", 0), 0u);
  EXPECT_EQ(slurp(dir / "a" / "summary.csv").rfind("metric,value\n", 0), 0u);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace ltdr
