// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "dtr/anchor_analysis.h"
#include "dtr/attention_engine.h"
#include "dtr/dtr_rebalance.h"
#include "dtr/frame_layout.h"
#include "dtr/logits.h"

namespace dtr {

inline constexpr char kTraceMagic[4] = {'A', 'T', 'R', 'C'};
inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr float kTraceMaskedValue = -3.4e38f;

// Precision the logits had before being widened to f32 on write.
enum class SourceDType { kF32, kF16, kBF16 };

std::string_view to_string(SourceDType d);
SourceDType parse_source_dtype(std::string_view s);

// Captured pre-softmax logits of the recorded query rows (score queries
// plus target) for a subset of layers, with the geometry needed to
// analyze them offline. Layout on disk: docs/trace-format.md.
struct AttentionTrace {
  int num_layers = 0;  // decoder depth of the source model
  int heads = 0;
  FrameLayout layout;
  Stage stage = Stage::prefill();
  QueryPlan plan;
  std::string model_tag;
  SourceDType source_dtype = SourceDType::kF32;
  // Each recorded layer: heads x recorded_queries() x keys().
  LogitTensor logits;

  std::vector<std::int64_t> recorded_queries() const;
  std::int64_t keys() const { return sequence_length(layout, stage); }
};

// Sorted union of the plan's score queries and target.
std::vector<std::int64_t> recorded_queries(const QueryPlan& plan);

// Writes magic, version, length-prefixed canonical JSON header and the f32
// body. Returns the bytes written: 4 + 4 + header block (4-byte length plus
// JSON) + body. Throws kEmptyQuerySet, kShapeMismatch or kSinkFailure.
std::size_t write_trace(const AttentionTrace& trace, std::ostream& sink);
std::size_t write_trace_file(const AttentionTrace& trace,
                             const std::string& path);

// Validates magic, version, header, shape and CRC-32. Every failure is a
// typed Error: kBadMagic, kVersionMismatch, kTruncated, kShapeMismatch,
// kChecksumFail, kMalformedHeader.
AttentionTrace read_trace(std::istream& source);
AttentionTrace read_trace_file(const std::string& path);

// Packages the engine's ORIGINAL logits for the plan's rows. `layers`
// selects recorded layers (empty = all).
AttentionTrace trace_from_forward(const ForwardResult& result,
                                  const FrameLayout& layout,
                                  const Stage& stage, int num_layers,
                                  std::string model_tag,
                                  std::span<const int> layers = {});

enum class StatRows {
  kTargetQuery,   // statistics on the modified row only
  kScoreQueries,  // the plan's full score-query set
};

struct ReplayOptions {
  StatRows rows = StatRows::kTargetQuery;
  // Analyze only the config's window (true) or every recorded layer.
  bool window_layers_only = true;
  // Reference anchor for non-anchor mass in the "after" report; defaults
  // to the "before" anchor.
  std::optional<std::size_t> reference_anchor;
};

struct ReplayResult {
  AnchorReport before;
  AnchorReport after;
  FrameScoreState state;
};

// Counterfactual DTR on recorded logits, one layer at a time, without
// cross-layer propagation. Both reports are labeled "non-propagated".
// Throws kMissingLayers if a windowed layer was not recorded.
ReplayResult replay_dtr(const AttentionTrace& trace, const DtrConfig& config,
                        const ReplayOptions& options = {});

}  // namespace dtr
