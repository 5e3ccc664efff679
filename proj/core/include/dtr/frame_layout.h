// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dtr {

// Half-open interval [begin, end) of sequence positions.
struct Span {
  std::int64_t begin = 0;
  std::int64_t end = 0;

  std::int64_t length() const { return end - begin; }
  bool contains(std::int64_t j) const { return j >= begin && j < end; }
  bool operator==(const Span&) const = default;
};

// Token geometry of a video-conditioned prompt: one contiguous block of
// visual tokens split into temporally ordered frames, surrounded by text.
//
// Frames may have unequal token counts. Positions listed in
// `excluded_queries` (chat-template tokens and the like) never join the
// prefill score-query set.
class FrameLayout {
 public:
  FrameLayout() = default;

  // Throws kInvalidLayout unless frame and text spans partition
  // [0, total_len) exactly once with frames forming one contiguous block.
  FrameLayout(std::vector<Span> frame_spans, std::vector<Span> text_spans,
              std::vector<std::int64_t> excluded_queries = {});

  static FrameLayout uniform(std::size_t num_frames,
                             std::int64_t tokens_per_frame,
                             std::int64_t text_before, std::int64_t text_after);

  static FrameLayout from_frame_sizes(std::span<const std::int64_t> sizes,
                                      std::int64_t text_before,
                                      std::int64_t text_after);

  bool empty() const { return total_len_ == 0; }
  std::size_t num_frames() const { return frame_spans_.size(); }
  std::int64_t total_len() const { return total_len_; }
  const std::vector<Span>& frame_spans() const { return frame_spans_; }
  const std::vector<Span>& text_spans() const { return text_spans_; }
  const Span& frame_span(std::size_t i) const { return frame_spans_.at(i); }
  const std::vector<std::int64_t>& excluded_queries() const {
    return excluded_queries_;
  }

  // First and one-past-last visual position.
  std::int64_t visual_begin() const;
  std::int64_t visual_end() const;
  bool is_visual(std::int64_t j) const {
    return j >= visual_begin() && j < visual_end();
  }

  // Frame index of position j, or nullopt for a text position.
  // Throws kOutOfRange unless 0 <= j < total_len.
  std::optional<std::size_t> frame_of_token(std::int64_t j) const;

  // Same frames, `count` extra text positions appended at the end.
  FrameLayout with_appended_text(std::int64_t count) const;

  bool operator==(const FrameLayout&) const = default;

 private:
  std::vector<Span> frame_spans_;
  std::vector<Span> text_spans_;
  std::vector<std::int64_t> excluded_queries_;
  std::int64_t total_len_ = 0;
};

// Forward state: the prefill pass, or the t-th autoregressive step whose
// query row sits at position total_len + t.
class Stage {
 public:
  static Stage prefill() { return Stage(-1); }
  static Stage decode(std::int64_t step);

  bool is_prefill() const { return step_ < 0; }
  std::int64_t step() const { return step_; }
  bool operator==(const Stage&) const = default;

 private:
  explicit Stage(std::int64_t step) : step_(step) {}
  std::int64_t step_;
};

struct QueryPlan {
  // Rows averaged for score estimation.
  std::vector<std::int64_t> score_queries;
  // The single row whose logits get modified.
  std::int64_t target_query = 0;

  bool operator==(const QueryPlan&) const = default;
};

// Number of key positions visible at `stage` (prefill: total_len).
std::int64_t sequence_length(const FrameLayout& layout, const Stage& stage);

// Prefill: every non-excluded position after the visual block scores,
// the last position is the target. Decode step t: both are total_len + t.
QueryPlan build_query_plan(const FrameLayout& layout, const Stage& stage);

// The plan restricted to its target row.
QueryPlan target_only(const QueryPlan& plan);

}  // namespace dtr
