// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "dtr/interventions.h"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "dtr/dtr_rebalance.h"
#include "dtr/error.h"
#include "oracles.h"

namespace dtr {
namespace {

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected dtr::Error";
  return ErrorCode::kIo;
}

std::vector<Sample> Samples(std::size_t n, std::uint64_t seed = 0) {
  SyntheticSpec spec;
  spec.seed = seed;
  return make_samples(spec, n);
}

void ExpectRowsNormalized(const LogitTensor& weights) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const LayerLogits& w = weights.layer_at(l);
    for (std::int64_t h = 0; h < w.heads(); ++h) {
      for (std::int64_t r = 0; r < w.num_rows(); ++r) {
        double total = 0.0;
        for (double v : w.row(h, r)) total += v;
        ASSERT_NEAR(total, 1.0, 1e-6);
      }
    }
  }
}

TEST(MaskHookTest, MaskedFrameGetsExactlyZeroWeight) {
  const Model model(ModelConfig{});
  for (const Sample& s : Samples(4)) {
    for (std::size_t frame : {0u, 3u, 7u}) {
      const ForwardResult r = prefill(
          model, s.input, s.layout,
          mask_hook(InterventionSpec::mask_frame(frame), s.layout, 4));
      const Span span = s.layout.frame_span(frame);
      ExpectRowsNormalized(r.weights);
      EXPECT_EQ(r.weights.layer_at(0), prefill(model, s.input, s.layout)
                                           .weights.layer_at(0));
      for (std::size_t l = 1; l < 4; ++l) {
        const LayerLogits& w = r.weights.layer_at(l);
        for (std::int64_t h = 0; h < w.heads(); ++h) {
          for (std::int64_t q = span.begin; q < w.num_rows(); ++q) {
            for (std::int64_t j = span.begin; j < std::min(span.end, q + 1); ++j) {
              ASSERT_EQ(w.at(h, q, j), 0.0);
            }
          }
        }
      }
    }
  }
}

TEST(MaskHookTest, RandomChoiceIsReproducible) {
  const auto a = resolve_frame(InterventionSpec::mask_random(42), 8);
  EXPECT_EQ(a, resolve_frame(InterventionSpec::mask_random(42), 8));
  EXPECT_LT(a, 8u);
  std::vector<int> seen(8, 0);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    ++seen[resolve_frame(InterventionSpec::mask_random(seed), 8)];
  }
  for (int count : seen) EXPECT_GT(count, 0);
}

TEST(MaskHookTest, Errors) {
  const FrameLayout layout = FrameLayout::uniform(4, 2, 0, 2);
  EXPECT_EQ(CodeOf([&] { mask_hook(InterventionSpec::mask_frame(4), layout, 4); }),
            ErrorCode::kFrameOutOfRange);
  InterventionSpec wide = InterventionSpec::mask_frame(0);
  wide.layer_end = 4;
  EXPECT_EQ(CodeOf([&] { mask_hook(wide, layout, 4); }),
            ErrorCode::kLayerWindowOutOfRange);
  EXPECT_EQ(CodeOf([&] { mask_hook(InterventionSpec::black_frame(0), layout, 4); }),
            ErrorCode::kInvalidConfig);
}

TEST(MaskHookTest, AllFramesMaskedSurfacesZeroVisualMass) {
  const Model model(ModelConfig{});
  const Sample s = Samples(1).front();
  std::vector<LogitHook> hooks;
  for (std::size_t i = 0; i < s.layout.num_frames(); ++i) {
    InterventionSpec spec = InterventionSpec::mask_frame(i);
    spec.layer_start = 0;
    hooks.push_back(mask_hook(spec, s.layout, 4));
  }
  const ForwardResult r = prefill(model, s.input, s.layout, compose_hooks(hooks));
  ExpectRowsNormalized(r.weights);
  const QueryPlan plan = build_query_plan(s.layout, Stage::prefill());
  EXPECT_EQ(CodeOf([&] { analyze_logits(r.modified, s.layout, plan); }),
            ErrorCode::kZeroVisualMass);
}

TEST(OfflineMaskTest, MatchesHookOnRecordedLogits) {
  const Model model(ModelConfig{});
  const Sample s = Samples(1).front();
  const ForwardResult r = prefill(model, s.input, s.layout);
  LogitTensor offline = r.original;
  const QueryPlan plan = build_query_plan(s.layout, Stage::prefill());
  InterventionSpec spec = InterventionSpec::mask_frame(2);
  spec.scope = RowScope::kTargetOnly;
  apply_offline(offline, spec, s.layout, plan, 4);
  const Span span = s.layout.frame_span(2);
  const LayerLogits& l2 = offline.layer_at(2);
  for (std::int64_t j = span.begin; j < span.end; ++j) {
    EXPECT_TRUE(is_masked(l2.at(0, plan.target_query, j)));
    EXPECT_FALSE(is_masked(l2.at(0, plan.target_query - 1, j)));
  }
  EXPECT_EQ(offline.layer_at(0), r.original.layer_at(0));
  EXPECT_EQ(CodeOf([&] {
              apply_offline(offline, InterventionSpec::black_frame(0), s.layout,
                            plan, 4);
            }),
            ErrorCode::kUnsupportedInTraceMode);
}

TEST(BlackFrameTest, BlankedKeysCarryOnlyTheKeyBias) {
  const Model model(ModelConfig{});
  const Sample s = Samples(1).front();
  const std::size_t frame = 5;
  ForwardInput blank = s.input;
  blank.embeddings = black_frame_embeddings(s.input.embeddings, s.layout, frame);
  const Span span = s.layout.frame_span(frame);
  for (std::int64_t j = 0; j < s.layout.total_len(); ++j) {
    for (std::int64_t c = 0; c < 32; ++c) {
      EXPECT_EQ(blank.embeddings(j, c),
                span.contains(j) ? 0.0 : s.input.embeddings(j, c));
    }
  }

  const ForwardResult r = prefill(model, blank, s.layout);
  const BlockWeights& w = model.blocks()[0];
  const std::int64_t dh = model.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::int64_t q = s.layout.total_len() - 1;
  // Independent query projection for the last row at the first layer.
  std::vector<double> x(s.input.embeddings.row(q).begin(),
                        s.input.embeddings.row(q).end());
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / 32.0 + 1e-6);
  std::vector<double> query(32);
  for (int o = 0; o < 32; ++o) {
    double acc = w.bq[o];
    for (int i = 0; i < 32; ++i) acc += x[i] * inv * w.wq(i, o);
    query[o] = acc;
  }
  for (std::int64_t h = 0; h < 4; ++h) {
    double dot = 0.0;
    for (std::int64_t c = 0; c < dh; ++c) dot += query[h * dh + c] * w.bk[h * dh + c];
    for (std::int64_t j = span.begin; j < span.end; ++j) {
      EXPECT_NEAR(r.original.layer_at(0).at(h, q, j),
                  dot * scale + s.input.key_bias[j], 1e-12);
    }
  }

  // First-layer locality: keys outside the span keep their logits.
  const ForwardResult base = prefill(model, s.input, s.layout);
  for (std::int64_t h = 0; h < 4; ++h) {
    for (std::int64_t j = 0; j <= q; ++j) {
      if (span.contains(j)) continue;
      EXPECT_EQ(r.original.layer_at(0).at(h, q, j),
                base.original.layer_at(0).at(h, q, j));
    }
  }
  EXPECT_EQ(CodeOf([&] {
              black_frame_embeddings(s.input.embeddings, s.layout, 8);
            }),
            ErrorCode::kFrameOutOfRange);
}

TEST(BlackFrameTest, StudyReportsBothHistograms) {
  const Model model(ModelConfig{});
  const auto samples = Samples(6);
  const BlackFrameStudy study = run_black_frame_study(model, samples);
  ASSERT_EQ(study.before.size(), 6u);
  EXPECT_NEAR(std::accumulate(study.histogram_before.begin(),
                              study.histogram_before.end(), 0.0), 1.0, 1e-12);
  EXPECT_NEAR(std::accumulate(study.histogram_after.begin(),
                              study.histogram_after.end(), 0.0), 1.0, 1e-12);
  EXPECT_GE(study.anchor_retained, 0.0);
  EXPECT_LE(study.anchor_retained, 1.0);
}

TEST(MaskingStudyTest, FourRowsCrossCheckedAgainstAnalysis) {
  const Model model(ModelConfig{});
  const auto samples = Samples(5);
  const auto anchors = compute_anchors(model, samples);
  StudyOptions opts;
  opts.seed = 9;
  opts.task_scorer = [](const Sample&, const ForwardResult& r) {
    return r.hidden(r.hidden.rows() - 1, 0);
  };
  const MaskingStudy study = run_masking_study(model, samples, anchors, opts);
  ASSERT_EQ(study.rows.size(), 4u);
  const char* names[] = {"normal", "mask_anchor", "mask_random",
                         "mask_fixed_non_anchor"};
  for (std::size_t c = 0; c < 4; ++c) {
    const ConditionRow& row = study.rows[c];
    EXPECT_EQ(condition_name(row.condition), names[c]);
    ASSERT_TRUE(row.task_score.has_value());
    double dom = 0.0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const Sample& s = samples[k];
      LogitHook hook;
      if (c > 0) {
        const std::size_t frame = row.masked_frames[k];
        if (c == 1) EXPECT_EQ(frame, anchors[k]);
        if (c == 3) EXPECT_NE(frame, anchors[k]);
        hook = mask_hook(InterventionSpec::mask_frame(frame), s.layout, 4);
      }
      const ForwardResult r = prefill(model, s.input, s.layout, hook);
      const QueryPlan plan = build_query_plan(s.layout, Stage::prefill());
      const AnchorReport ref =
          attention_stats(frame_mass(averaged_logits(r.modified, plan), s.layout),
                          anchors[k]);
      EXPECT_EQ(row.reports[k].distribution, ref.distribution);
      EXPECT_EQ(row.reports[k].non_anchor, ref.non_anchor);
      if (c == 1) {
        // Masking starts at layer 1, so the anchor keeps only layer-0 mass.
        for (const LayerStats& ls : row.reports[k].per_layer) {
          if (ls.layer >= 1) EXPECT_EQ(ls.distribution[anchors[k]], 0.0);
        }
      }
      dom += ref.dominance;
    }
    EXPECT_NEAR(row.dominance, dom / samples.size(), 1e-12);
  }
  EXPECT_LT(study.rows[1].dominance, study.rows[0].dominance);

  std::ostringstream csv;
  write_study_csv(csv, study);
  const std::string text = csv.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
}

TEST(MaskingStudyTest, RandomConditionIsReproducible) {
  const Model model(ModelConfig{});
  const auto samples = Samples(4, 3);
  const auto anchors = compute_anchors(model, samples);
  StudyOptions opts;
  opts.seed = 77;
  const MaskingStudy a = run_masking_study(model, samples, anchors, opts);
  opts.workers = 3;
  const MaskingStudy b = run_masking_study(model, samples, anchors, opts);
  EXPECT_EQ(a.rows[2].masked_frames, b.rows[2].masked_frames);
  EXPECT_EQ(a.rows[2].dominance, b.rows[2].dominance);
}

TEST(MaskAndDtrTest, MaskedFramesGetNoBiasAndNoMass) {
  const Model model(ModelConfig{});
  const Sample s = Samples(1).front();
  InterventionSpec spec = InterventionSpec::mask_frame(0);
  spec.layer_start = 0;
  const DtrConfig cfg{0.5, 0.4, 1e-6, 0, 3};
  FrameScoreState captured;
  const LogitHook dtr = [&](const HookContext& ctx, LayerLogits& z) {
    captured.layers.push_back(rebalance_layer(z, s.layout, *ctx.plan, cfg, ctx.layer));
  };
  const ForwardResult r = prefill(
      model, s.input, s.layout,
      compose_hooks({mask_hook(spec, s.layout, 4), dtr}));
  ExpectRowsNormalized(r.weights);
  ASSERT_EQ(captured.layers.size(), 4u);
  for (const LayerScoreState& st : captured.layers) {
    EXPECT_FALSE(st.scores[0].has_value());
    EXPECT_EQ(st.bias.bias[0], 0.0);
    for (std::size_t i = 1; i < st.bias.bias.size(); ++i) {
      EXPECT_GE(st.bias.bias[i], 0.5);
    }
  }
  const std::int64_t q = s.layout.total_len() - 1;
  const Span span = s.layout.frame_span(0);
  for (std::size_t l = 0; l < 4; ++l) {
    for (std::int64_t j = span.begin; j < span.end; ++j) {
      EXPECT_EQ(r.weights.layer_at(l).at(0, q, j), 0.0);
    }
  }
}

}  // namespace
}  // namespace dtr
