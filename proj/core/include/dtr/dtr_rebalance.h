// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtr/attention_engine.h"
#include "dtr/frame_layout.h"
#include "dtr/logits.h"

namespace dtr {

struct DtrConfig {
  double alpha = 0.0;    // shared adjustment applied to every frame
  double beta = 0.0;     // extra compensation scaled by the normalized gap
  double epsilon = 1e-6;
  int layer_start = 0;   // inclusive window of modified layers
  int layer_end = 0;

  bool in_window(int layer) const {
    return layer >= layer_start && layer <= layer_end;
  }
  bool is_identity() const { return alpha == 0.0 && beta == 0.0; }

  // kInvalidConfig for negative alpha/beta or non-positive epsilon;
  // kLayerWindowOutOfRange unless 0 <= start <= end < num_layers.
  void validate(int num_layers) const;

  bool operator==(const DtrConfig&) const = default;
};

// Reads `key = value` lines (alpha, beta, epsilon, layer_start, layer_end)
// on top of `base`. '#' starts a comment. Unknown keys are kInvalidConfig.
DtrConfig parse_dtr_config(std::istream& in, DtrConfig base = {});
DtrConfig load_dtr_config(const std::string& path, DtrConfig base = {});

// Mean over each frame's tokens of the query/head-averaged raw logit.
// Masked entries are skipped; a frame with nothing unmasked has no score.
std::vector<std::optional<double>> frame_scores(const LayerLogits& logits,
                                                const FrameLayout& layout,
                                                const QueryPlan& plan);

struct FrameBias {
  std::vector<double> gap;
  std::vector<double> normalized_gap;
  std::vector<double> bias;
  // false for frames without a score; they get zero gap and zero bias.
  std::vector<bool> active;
};

// gap_i = max_k s_k - s_i, normalized by (max_k gap_k + epsilon),
// bias_i = alpha + beta * normalized_gap_i.
FrameBias gaps_and_bias(std::span<const std::optional<double>> scores,
                        const DtrConfig& config);
FrameBias gaps_and_bias(std::span<const double> scores,
                        const DtrConfig& config);

// z_j += bias[frame(j)] * |z_j| for unmasked visual keys of one row.
void inject_bias(std::span<double> row, const FrameLayout& layout,
                 std::span<const double> bias);

struct LayerScoreState {
  int layer = 0;
  std::vector<std::optional<double>> scores;
  FrameBias bias;
};

struct FrameScoreState {
  std::vector<LayerScoreState> layers;
};

// Scores `logits` (the layer's incoming logits) with `plan`, then lifts the
// target row of every head. Other rows are left untouched.
LayerScoreState rebalance_layer(LayerLogits& logits, const FrameLayout& layout,
                                const QueryPlan& plan, const DtrConfig& config,
                                int layer);

// Engine hook applying rebalance_layer inside the configured window.
// Throws kLayerWindowOutOfRange if the window does not fit num_layers.
LogitHook make_dtr_hook(const DtrConfig& config, const FrameLayout& layout,
                        int num_layers);

// Decode-shaped convenience for foreign callers: one query row of one
// layer, heads x keys row-major, returns the per-frame bias.
std::vector<double> single_row_bias(std::span<const double> row_major,
                                    std::int64_t heads,
                                    const FrameLayout& layout,
                                    const DtrConfig& config);

}  // namespace dtr
