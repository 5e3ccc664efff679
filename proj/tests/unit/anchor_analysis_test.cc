// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "dtr/anchor_analysis.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dtr/error.h"
#include "oracles.h"

namespace dtr {
namespace {

using testing::oracle_average;
using testing::oracle_frame_mass;
using testing::random_raw;
using testing::to_tensor;

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected dtr::Error";
  return ErrorCode::kIo;
}

FrameMassTable Table(std::vector<std::vector<double>> mass) {
  FrameMassTable t;
  for (std::size_t l = 0; l < mass.size(); ++l) {
    t.layers.push_back(static_cast<int>(l));
    t.visual_ratio.push_back(std::accumulate(mass[l].begin(), mass[l].end(), 0.0));
  }
  t.mass = std::move(mass);
  return t;
}

AnchorReport ReportWithAnchor(std::size_t anchor, std::size_t frames) {
  AnchorReport r;
  r.anchor = anchor;
  r.distribution.assign(frames, 1.0 / static_cast<double>(frames));
  return r;
}

TEST(AveragedLogitsTest, SingleRowIsIdentity) {
  LogitTensor t;
  LayerLogits layer(1, {3}, 4);
  const std::vector<double> row{0.5, -1.0, 2.0, 0.25};
  std::copy(row.begin(), row.end(), layer.row(0, 0).begin());
  t.add_layer(0, layer);
  const AveragedLogits avg = averaged_logits(t, {{3}, 3});
  EXPECT_EQ(avg.values[0], row);
}

TEST(AveragedLogitsTest, OpposingHeadsCancel) {
  LogitTensor t;
  LayerLogits layer(2, {2}, 3);
  for (int j = 0; j < 3; ++j) {
    layer.at(0, 0, j) = 1.5 * (j + 1);
    layer.at(1, 0, j) = -1.5 * (j + 1);
  }
  t.add_layer(0, layer);
  const AveragedLogits avg = averaged_logits(t, {{2}, 2});
  for (double v : avg.values[0]) EXPECT_EQ(v, 0.0);
}

TEST(AveragedLogitsTest, MatchesLoopOracle) {
  std::mt19937_64 gen(17);
  const std::vector<std::int64_t> queries{5, 6, 7};
  for (int trial = 0; trial < 100; ++trial) {
    const auto raw = random_raw(gen, 2, 2, 3, 8);
    const LogitTensor t = to_tensor(raw, queries);
    const AveragedLogits avg = averaged_logits(t, {queries, 7});
    for (int l = 0; l < 2; ++l) {
      const auto expected = oracle_average(raw[l], {0, 1, 2}, 6);
      ASSERT_EQ(avg.values[l].size(), expected.size());
      for (std::size_t j = 0; j < expected.size(); ++j) {
        EXPECT_NEAR(avg.values[l][j], expected[j], 1e-9);
      }
    }
  }
}

TEST(AveragedLogitsTest, Errors) {
  LogitTensor t;
  t.add_layer(0, LayerLogits(1, {2}, 3));
  EXPECT_EQ(CodeOf([&] { averaged_logits(t, {{}, 2}); }), ErrorCode::kEmptyQuerySet);
  EXPECT_EQ(CodeOf([&] { averaged_logits(LogitTensor{}, {{2}, 2}); }),
            ErrorCode::kEmptyLayerSet);
  const std::vector<int> missing{3};
  EXPECT_EQ(CodeOf([&] { averaged_logits(t, {{2}, 2}, missing); }),
            ErrorCode::kMissingLayers);
}

TEST(FrameMassTest, UniformLogits) {
  const FrameLayout layout = FrameLayout::uniform(2, 2, 0, 4);
  AveragedLogits avg{{0}, {std::vector<double>(8, -0.3)}};
  const FrameMassTable t = frame_mass(avg, layout);
  EXPECT_NEAR(t.mass[0][0], 0.25, 1e-15);
  EXPECT_NEAR(t.mass[0][1], 0.25, 1e-15);
  EXPECT_NEAR(t.visual_ratio[0], 0.5, 1e-15);
}

TEST(FrameMassTest, LargeLogitTakesAllMass) {
  const FrameLayout layout = FrameLayout::uniform(2, 2, 0, 4);
  std::vector<double> z(8, 0.0);
  z[3] = 200.0;
  const FrameMassTable t = frame_mass({{0}, {z}}, layout);
  EXPECT_NEAR(t.mass[0][1], 1.0, 1e-12);
  EXPECT_NEAR(t.mass[0][0], 0.0, 1e-12);
}

TEST(FrameMassTest, MatchesSoftmaxSumOracle) {
  std::mt19937_64 gen(23);
  std::uniform_real_distribution<double> dist(-8.0, 4.0);
  for (int trial = 0; trial < 100; ++trial) {
    const FrameLayout layout = FrameLayout::uniform(1 + trial % 6, 1 + trial % 3,
                                                    trial % 2, 2);
    std::vector<double> z(static_cast<std::size_t>(layout.total_len()));
    for (double& v : z) v = dist(gen);
    const FrameMassTable t = frame_mass({{0}, {z}}, layout);
    const auto expected = oracle_frame_mass(z, layout);
    for (std::size_t i = 0; i < expected.size(); ++i) {
      EXPECT_NEAR(t.mass[0][i], expected[i], 1e-9);
    }
  }
}

TEST(FrameMassTest, InvariantUnderHeadAndQueryPermutationAndShift) {
  std::mt19937_64 gen(29);
  const FrameLayout layout = FrameLayout::uniform(3, 2, 1, 4);
  const std::vector<std::int64_t> queries{7, 8, 9, 10};
  for (int trial = 0; trial < 50; ++trial) {
    auto raw = random_raw(gen, 1, 3, 4, 11);
    const QueryPlan plan{queries, 10};
    const auto base = frame_mass(averaged_logits(to_tensor(raw, queries), plan),
                                 layout);

    auto permuted = raw;
    std::reverse(permuted[0].begin(), permuted[0].end());
    for (auto& head : permuted[0]) std::reverse(head.begin(), head.end());
    const auto p = frame_mass(averaged_logits(to_tensor(permuted, queries), plan),
                              layout);

    auto shifted = raw;
    for (auto& head : shifted[0])
      for (auto& row : head)
        for (double& z : row) z += 3.75;
    const auto s = frame_mass(averaged_logits(to_tensor(shifted, queries), plan),
                              layout);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(p.mass[0][i], base.mass[0][i], 1e-12);
      EXPECT_NEAR(s.mass[0][i], base.mass[0][i], 1e-12);
    }
  }
}

TEST(SelectAnchorTest, Examples) {
  EXPECT_EQ(select_anchor(Table({{0.5, 0.3}})), 0u);
  EXPECT_EQ(select_anchor(Table({{0.4, 0.4}})), 0u);
  EXPECT_EQ(select_anchor(Table({{0.1, 0.6}, {0.5, 0.2}})), 1u);
  EXPECT_EQ(CodeOf([] { select_anchor(FrameMassTable{}); }),
            ErrorCode::kEmptyLayerSet);
}

TEST(SelectAnchorTest, MatchesOracleAndMonotoneTransform) {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> mass(3, std::vector<double>(6));
    for (auto& row : mass)
      for (double& v : row) v = dist(gen);
    std::vector<double> mean(6, 0.0);
    for (const auto& row : mass)
      for (int i = 0; i < 6; ++i) mean[i] += row[i] / 3.0;
    const std::size_t expected = testing::oracle_argmax(mean);
    EXPECT_EQ(select_anchor(Table(mass)), expected);

    auto transformed = mass;
    for (auto& row : transformed)
      for (double& v : row) v = 2.5 * v + 0.1;
    EXPECT_EQ(select_anchor(Table(transformed)), expected);
  }
}

TEST(AttentionStatsTest, UniformDistribution) {
  const AnchorReport r = attention_stats(Table({std::vector<double>(8, 0.05)}));
  EXPECT_NEAR(r.dominance, 0.125, 1e-15);
  EXPECT_NEAR(r.entropy, std::log(8.0), 1e-12);
  EXPECT_NEAR(r.non_anchor, 0.875, 1e-15);
  EXPECT_EQ(r.anchor, 0u);
}

TEST(AttentionStatsTest, OneHotDistribution) {
  const AnchorReport r = attention_stats(Table({{0.0, 0.0, 0.3, 0.0}}));
  EXPECT_EQ(r.anchor, 2u);
  EXPECT_EQ(r.dominance, 1.0);
  EXPECT_EQ(r.entropy, 0.0);
  EXPECT_EQ(r.non_anchor, 0.0);
}

TEST(AttentionStatsTest, ReferenceAnchorAndBounds) {
  std::mt19937_64 gen(37);
  std::uniform_real_distribution<double> dist(0.001, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> mass(2, std::vector<double>(8));
    for (auto& row : mass)
      for (double& v : row) v = dist(gen);
    const AnchorReport own = attention_stats(Table(mass));
    EXPECT_GE(own.dominance, 0.125 - 1e-15);
    EXPECT_GE(own.entropy, 0.0);
    EXPECT_LE(own.entropy, std::log(8.0) + 1e-12);
    EXPECT_EQ(own.dominance + own.non_anchor, 1.0);

    const std::size_t ref = (own.anchor + 1) % 8;
    const AnchorReport other = attention_stats(Table(mass), ref);
    EXPECT_EQ(other.reference_anchor, ref);
    EXPECT_DOUBLE_EQ(other.non_anchor, 1.0 - other.distribution[ref]);
    ASSERT_EQ(other.per_layer.size(), 2u);
  }
}

TEST(AttentionStatsTest, ZeroMassIsAnError) {
  EXPECT_EQ(CodeOf([] { attention_stats(Table({{0.0, 0.0}})); }),
            ErrorCode::kZeroVisualMass);
}

TEST(AnchorHistogramTest, Examples) {
  std::vector<AnchorReport> reports;
  for (std::size_t a : {0, 0, 1, 0}) reports.push_back(ReportWithAnchor(a, 2));
  EXPECT_EQ(anchor_histogram(reports), (std::vector<double>{0.75, 0.25}));

  const std::vector<AnchorReport> single{ReportWithAnchor(2, 4)};
  EXPECT_EQ(anchor_histogram(single), (std::vector<double>{0, 0, 1, 0}));

  std::vector<AnchorReport> forced(100, ReportWithAnchor(0, 8));
  const auto h = anchor_histogram(forced);
  EXPECT_EQ(h[0], 1.0);
  EXPECT_EQ(std::accumulate(h.begin() + 1, h.end(), 0.0), 0.0);
}

TEST(AnchorHistogramTest, Errors) {
  EXPECT_EQ(CodeOf([] { anchor_histogram({}); }), ErrorCode::kEmptyInput);
  const std::vector<AnchorReport> mixed{ReportWithAnchor(0, 2),
                                        ReportWithAnchor(0, 3)};
  EXPECT_EQ(CodeOf([&] { anchor_histogram(mixed); }),
            ErrorCode::kMixedFrameCounts);
}

}  // namespace
}  // namespace dtr
