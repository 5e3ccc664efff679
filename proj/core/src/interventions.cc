// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "dtr/interventions.h"

#include <fmt/format.h>

#include <random>

#include "dtr/error.h"
#include "dtr/parallel.h"

namespace dtr {
namespace {

struct Window {
  int start;
  int end;
};

Window resolve_window(int start, int end, int num_layers) {
  const int e = end < 0 ? num_layers - 1 : end;
  if (start < 0 || start > e || e >= num_layers) {
    fail(ErrorCode::kLayerWindowOutOfRange,
         "mask window [" + std::to_string(start) + ", " + std::to_string(e) +
             "] does not fit " + std::to_string(num_layers) + " layers");
  }
  return {start, e};
}

void mask_layer(LayerLogits& logits, const Span& span, RowScope scope,
                std::int64_t target) {
  for (std::int64_t r = 0; r < logits.num_rows(); ++r) {
    const std::int64_t q = logits.query_positions()[static_cast<std::size_t>(r)];
    if (scope == RowScope::kTargetOnly && q != target) continue;
    if (q < span.begin) continue;
    const std::int64_t last = std::min({span.end - 1, q, logits.keys() - 1});
    for (std::int64_t h = 0; h < logits.heads(); ++h) {
      auto row = logits.row(h, r);
      for (std::int64_t j = span.begin; j <= last; ++j) {
        row[static_cast<std::size_t>(j)] = kMaskedLogit;
      }
    }
  }
}

double mean(std::span<const AnchorReport> reports,
            double AnchorReport::*field) {
  double total = 0.0;
  for (const auto& r : reports) total += r.*field;
  return total / static_cast<double>(reports.size());
}

}  // namespace

InterventionSpec InterventionSpec::mask_frame(std::size_t frame) {
  InterventionSpec s;
  s.kind = InterventionKind::kMaskFrame;
  s.frame = frame;
  return s;
}

InterventionSpec InterventionSpec::mask_random(std::uint64_t seed) {
  InterventionSpec s;
  s.kind = InterventionKind::kMaskRandom;
  s.seed = seed;
  return s;
}

InterventionSpec InterventionSpec::black_frame(std::size_t frame) {
  InterventionSpec s;
  s.kind = InterventionKind::kBlackFrame;
  s.frame = frame;
  return s;
}

std::size_t resolve_frame(const InterventionSpec& spec,
                          std::size_t num_frames) {
  if (num_frames == 0) fail(ErrorCode::kFrameOutOfRange, "no frames");
  if (spec.kind == InterventionKind::kMaskRandom) {
    std::mt19937_64 gen(spec.seed);
    return static_cast<std::size_t>(gen() % num_frames);
  }
  if (spec.frame >= num_frames) {
    fail(ErrorCode::kFrameOutOfRange,
         "frame " + std::to_string(spec.frame) + " >= " +
             std::to_string(num_frames));
  }
  return spec.frame;
}

LogitHook mask_hook(const InterventionSpec& spec, const FrameLayout& layout,
                    int num_layers) {
  if (spec.kind != InterventionKind::kMaskFrame &&
      spec.kind != InterventionKind::kMaskRandom) {
    fail(ErrorCode::kInvalidConfig, "mask_hook needs a mask intervention");
  }
  const std::size_t frame = resolve_frame(spec, layout.num_frames());
  const Window window =
      resolve_window(spec.layer_start, spec.layer_end, num_layers);
  const Span span = layout.frame_span(frame);
  const RowScope scope = spec.scope;
  return [window, span, scope](const HookContext& ctx, LayerLogits& logits) {
    if (ctx.layer < window.start || ctx.layer > window.end) return;
    mask_layer(logits, span, scope, ctx.plan->target_query);
  };
}

Matrix black_frame_embeddings(const Matrix& embeddings,
                              const FrameLayout& layout, std::size_t frame) {
  if (frame >= layout.num_frames()) {
    fail(ErrorCode::kFrameOutOfRange,
         "frame " + std::to_string(frame) + " >= " +
             std::to_string(layout.num_frames()));
  }
  if (embeddings.rows() != layout.total_len()) {
    fail(ErrorCode::kShapeMismatch, "embeddings do not match the layout");
  }
  Matrix out = embeddings;
  const Span& span = layout.frame_span(frame);
  for (std::int64_t j = span.begin; j < span.end; ++j) {
    for (double& v : out.row(j)) v = 0.0;
  }
  return out;
}

void apply_offline(LogitTensor& logits, const InterventionSpec& spec,
                   const FrameLayout& layout, const QueryPlan& plan,
                   int num_layers) {
  switch (spec.kind) {
    case InterventionKind::kNone:
      return;
    case InterventionKind::kBlackFrame:
      fail(ErrorCode::kUnsupportedInTraceMode,
           "black-frame substitution needs the engine to re-encode inputs");
    case InterventionKind::kMaskFrame:
    case InterventionKind::kMaskRandom:
      break;
  }
  const std::size_t frame = resolve_frame(spec, layout.num_frames());
  const Window window =
      resolve_window(spec.layer_start, spec.layer_end, num_layers);
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const int id = logits.layer_ids()[k];
    if (id < window.start || id > window.end) continue;
    mask_layer(logits.layer_at(k), layout.frame_span(frame), spec.scope,
               plan.target_query);
  }
}

std::vector<std::size_t> compute_anchors(const Model& model,
                                         std::span<const Sample> samples,
                                         std::span<const int> layers) {
  std::vector<std::size_t> anchors;
  anchors.reserve(samples.size());
  for (const Sample& s : samples) {
    const ForwardResult result = prefill(model, s.input, s.layout);
    const QueryPlan plan = build_query_plan(s.layout, Stage::prefill());
    anchors.push_back(
        analyze_logits(result.modified, s.layout, plan, layers).anchor);
  }
  return anchors;
}

std::string_view condition_name(StudyCondition c) {
  switch (c) {
    case StudyCondition::kNormal: return "normal";
    case StudyCondition::kMaskAnchor: return "mask_anchor";
    case StudyCondition::kMaskRandom: return "mask_random";
    case StudyCondition::kMaskFixed: return "mask_fixed_non_anchor";
  }
  return "unknown";
}

MaskingStudy run_masking_study(const Model& model,
                               std::span<const Sample> samples,
                               std::span<const std::size_t> anchors,
                               const StudyOptions& options) {
  if (samples.empty()) fail(ErrorCode::kEmptyInput, "no samples");
  if (anchors.size() != samples.size()) {
    fail(ErrorCode::kShapeMismatch, "one anchor per sample required");
  }
  const int num_layers = model.config().num_layers;
  resolve_window(options.layer_start, options.layer_end, num_layers);

  const StudyCondition conditions[] = {
      StudyCondition::kNormal, StudyCondition::kMaskAnchor,
      StudyCondition::kMaskRandom, StudyCondition::kMaskFixed};
  MaskingStudy study;
  for (StudyCondition c : conditions) {
    ConditionRow row;
    row.condition = c;
    row.reports.resize(samples.size());
    if (c != StudyCondition::kNormal) row.masked_frames.resize(samples.size());
    std::vector<double> task(samples.size(), 0.0);

    parallel_for(
        samples.size(),
        [&](std::size_t k) {
          const Sample& s = samples[k];
          const std::size_t n = s.layout.num_frames();
          const std::size_t anchor = anchors[k];
          if (anchor >= n) {
            fail(ErrorCode::kFrameOutOfRange, "anchor outside frame range");
          }
          LogitHook hook;
          if (c != StudyCondition::kNormal) {
            InterventionSpec spec;
            spec.layer_start = options.layer_start;
            spec.layer_end = options.layer_end;
            if (c == StudyCondition::kMaskAnchor) {
              spec.kind = InterventionKind::kMaskFrame;
              spec.frame = anchor;
            } else if (c == StudyCondition::kMaskRandom) {
              spec.kind = InterventionKind::kMaskRandom;
              spec.seed = options.seed + k;
            } else {
              spec.kind = InterventionKind::kMaskFrame;
              spec.frame = options.fixed_frame % n;
              if (spec.frame == anchor) spec.frame = (spec.frame + 1) % n;
            }
            row.masked_frames[k] = resolve_frame(spec, n);
            hook = mask_hook(spec, s.layout, num_layers);
          }
          const ForwardResult result = prefill(model, s.input, s.layout, hook);
          const QueryPlan plan = build_query_plan(s.layout, Stage::prefill());
          AnchorReport report = analyze_logits(
              result.modified, s.layout, plan, options.analysis_layers, anchor);
          report.sample_id = s.id;
          row.reports[k] = std::move(report);
          if (options.task_scorer) task[k] = options.task_scorer(s, result);
        },
        options.workers);

    row.dominance = mean(row.reports, &AnchorReport::dominance);
    row.entropy = mean(row.reports, &AnchorReport::entropy);
    row.non_anchor = mean(row.reports, &AnchorReport::non_anchor);
    if (options.task_scorer) {
      double total = 0.0;
      for (double t : task) total += t;
      row.task_score = total / static_cast<double>(task.size());
    }
    study.rows.push_back(std::move(row));
  }
  return study;
}

void write_study_csv(std::ostream& out, const MaskingStudy& study) {
  out << "condition,dominance,entropy,non_anchor,task_score\n";
  for (const ConditionRow& row : study.rows) {
    out << fmt::format("{},{:.10g},{:.10g},{:.10g},", condition_name(row.condition),
                       row.dominance, row.entropy, row.non_anchor);
    if (row.task_score) out << fmt::format("{:.10g}", *row.task_score);
    out << '\n';
  }
}

BlackFrameStudy run_black_frame_study(const Model& model,
                                      std::span<const Sample> samples,
                                      std::span<const int> layers,
                                      std::size_t workers) {
  if (samples.empty()) fail(ErrorCode::kEmptyInput, "no samples");
  BlackFrameStudy study;
  study.before.resize(samples.size());
  study.after.resize(samples.size());
  parallel_for(
      samples.size(),
      [&](std::size_t k) {
        const Sample& s = samples[k];
        const QueryPlan plan = build_query_plan(s.layout, Stage::prefill());
        AnchorReport before = analyze_logits(
            prefill(model, s.input, s.layout).modified, s.layout, plan, layers);
        ForwardInput blanked = s.input;
        blanked.embeddings =
            black_frame_embeddings(s.input.embeddings, s.layout, before.anchor);
        AnchorReport after =
            analyze_logits(prefill(model, blanked, s.layout).modified, s.layout,
                           plan, layers, before.anchor);
        before.sample_id = s.id;
        after.sample_id = s.id;
        study.before[k] = std::move(before);
        study.after[k] = std::move(after);
      },
      workers);
  study.histogram_before = anchor_histogram(study.before);
  study.histogram_after = anchor_histogram(study.after);
  std::size_t kept = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    if (study.before[k].anchor == study.after[k].anchor) ++kept;
  }
  study.anchor_retained =
      static_cast<double>(kept) / static_cast<double>(samples.size());
  return study;
}

}  // namespace dtr
