// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dtr/anchor_analysis.h"
#include "dtr/attention_engine.h"
#include "dtr/frame_layout.h"
#include "dtr/synthetic.h"

namespace dtr {

enum class InterventionKind { kNone, kMaskFrame, kMaskRandom, kBlackFrame };

enum class RowScope {
  kAllRows,     // every row that can see the masked keys
  kTargetOnly,  // only the stage's target row
};

struct InterventionSpec {
  InterventionKind kind = InterventionKind::kNone;
  std::size_t frame = 0;   // kMaskFrame, kBlackFrame
  std::uint64_t seed = 0;  // kMaskRandom
  // Inclusive, 0-indexed. layer_end < 0 means the last layer. The default
  // [1, L-1] skips only the first decoder layer.
  int layer_start = 1;
  int layer_end = -1;
  RowScope scope = RowScope::kAllRows;

  static InterventionSpec mask_frame(std::size_t frame);
  static InterventionSpec mask_random(std::uint64_t seed);
  static InterventionSpec black_frame(std::size_t frame);
};

// The frame an intervention targets. kMaskRandom draws
// mt19937_64(seed)() % num_frames. Throws kFrameOutOfRange.
std::size_t resolve_frame(const InterventionSpec& spec, std::size_t num_frames);

// Sets the selected frame's logits to the masked sentinel in every windowed
// layer, on the rows picked by spec.scope. Softmax renormalizes over the
// remaining keys.
LogitHook mask_hook(const InterventionSpec& spec, const FrameLayout& layout,
                    int num_layers);

// Copy of `embeddings` with frame `frame`'s rows replaced by zeros.
Matrix black_frame_embeddings(const Matrix& embeddings,
                              const FrameLayout& layout, std::size_t frame);

// Applies a mask intervention to recorded logits (no engine available).
// Black-frame substitution needs the engine: kUnsupportedInTraceMode.
void apply_offline(LogitTensor& logits, const InterventionSpec& spec,
                   const FrameLayout& layout, const QueryPlan& plan,
                   int num_layers);

// Baseline prefill anchor of each sample, analyzed over `layers`
// (empty = all).
std::vector<std::size_t> compute_anchors(const Model& model,
                                         std::span<const Sample> samples,
                                         std::span<const int> layers = {});

enum class StudyCondition { kNormal, kMaskAnchor, kMaskRandom, kMaskFixed };

std::string_view condition_name(StudyCondition c);

// Optional synthetic task: score one forward pass of one sample.
using TaskScorer =
    std::function<double(const Sample&, const ForwardResult&)>;

struct StudyOptions {
  int layer_start = 1;
  int layer_end = -1;
  std::uint64_t seed = 0;       // sample k draws its random frame with seed + k
  std::size_t fixed_frame = 3;  // 0-indexed; bumped by one if it is the anchor
  std::vector<int> analysis_layers;
  TaskScorer task_scorer;
  std::size_t workers = 1;
};

struct ConditionRow {
  StudyCondition condition = StudyCondition::kNormal;
  double dominance = 0.0;
  double entropy = 0.0;
  double non_anchor = 0.0;
  std::optional<double> task_score;
  std::vector<std::size_t> masked_frames;  // per sample; empty for kNormal
  std::vector<AnchorReport> reports;       // per sample
};

struct MaskingStudy {
  // Always four rows: normal, mask-anchor, mask-random, mask-fixed.
  std::vector<ConditionRow> rows;
};

// Non-anchor mass is measured against each sample's precomputed anchor.
MaskingStudy run_masking_study(const Model& model,
                               std::span<const Sample> samples,
                               std::span<const std::size_t> anchors,
                               const StudyOptions& options = {});

// condition,dominance,entropy,non_anchor,task_score
void write_study_csv(std::ostream& out, const MaskingStudy& study);

struct BlackFrameStudy {
  std::vector<AnchorReport> before;
  std::vector<AnchorReport> after;
  std::vector<double> histogram_before;
  std::vector<double> histogram_after;
  // Fraction of samples whose anchor position survives the substitution.
  double anchor_retained = 0.0;
};

// Replaces each sample's own anchor frame with the blank embedding and
// compares anchor positions before and after.
BlackFrameStudy run_black_frame_study(const Model& model,
                                      std::span<const Sample> samples,
                                      std::span<const int> layers = {},
                                      std::size_t workers = 1);

}  // namespace dtr
