// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtr/frame_layout.h"
#include "dtr/logits.h"

namespace dtr {

// Query/head-averaged raw logits per analyzed layer. Covers keys
// [0, min(score_queries)], which every score query can see.
struct AveragedLogits {
  std::vector<int> layers;
  std::vector<std::vector<double>> values;  // [layer index][key]
};

// Averages logits over the plan's score queries and all heads. `layers`
// selects which recorded layers to use; empty means all of them. A key
// with any masked contribution stays masked.
AveragedLogits averaged_logits(const LogitTensor& logits, const QueryPlan& plan,
                               std::span<const int> layers = {});

// Per-layer attention mass of each frame after a full-key softmax of the
// averaged logits. visual_ratio[l] is the total visual mass at that layer.
struct FrameMassTable {
  std::vector<int> layers;
  std::vector<std::vector<double>> mass;  // [layer index][frame]
  std::vector<double> visual_ratio;       // [layer index]

  std::size_t num_frames() const {
    return mass.empty() ? 0 : mass.front().size();
  }
  // Mean over analyzed layers, per frame.
  std::vector<double> layer_mean() const;
};

FrameMassTable frame_mass(const AveragedLogits& averaged,
                          const FrameLayout& layout);

// Frame with the largest layer-averaged mass; ties go to the lower index.
std::size_t select_anchor(const FrameMassTable& masses);

struct LayerStats {
  int layer = 0;
  std::vector<double> distribution;  // normalized over frames
  double dominance = 0.0;
  double entropy = 0.0;
  double non_anchor = 0.0;
  double visual_ratio = 0.0;
};

struct AnchorReport {
  std::string sample_id;
  // "propagated" for engine runs, "non-propagated" for trace replay.
  std::string label = "propagated";
  std::size_t anchor = 0;
  std::size_t reference_anchor = 0;
  // Normalized layer-mean frame mass.
  std::vector<double> distribution;
  double dominance = 0.0;
  double entropy = 0.0;
  double non_anchor = 0.0;
  std::vector<LayerStats> per_layer;

  std::size_t num_frames() const { return distribution.size(); }
};

// Dominance is max_i p_i, entropy uses the natural log, and non_anchor is
// 1 - p[reference] where the reference defaults to this run's own anchor.
// Throws kZeroVisualMass when any analyzed layer has no visual mass.
AnchorReport attention_stats(const FrameMassTable& masses,
                             std::optional<std::size_t> reference_anchor = {});

// Fraction of reports selecting each frame as anchor.
std::vector<double> anchor_histogram(std::span<const AnchorReport> reports);

// averaged_logits -> frame_mass -> attention_stats in one call.
AnchorReport analyze_logits(const LogitTensor& logits,
                            const FrameLayout& layout, const QueryPlan& plan,
                            std::span<const int> layers = {},
                            std::optional<std::size_t> reference_anchor = {});

double distribution_entropy(std::span<const double> p);

}  // namespace dtr
