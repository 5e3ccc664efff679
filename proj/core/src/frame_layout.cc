// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "dtr/frame_layout.h"

#include <algorithm>
#include <string>

#include "dtr/error.h"

namespace dtr {

FrameLayout::FrameLayout(std::vector<Span> frame_spans,
                         std::vector<Span> text_spans,
                         std::vector<std::int64_t> excluded_queries)
    : frame_spans_(std::move(frame_spans)),
      text_spans_(std::move(text_spans)),
      excluded_queries_(std::move(excluded_queries)) {
  if (frame_spans_.empty()) {
    fail(ErrorCode::kInvalidLayout, "layout needs at least one frame");
  }
  for (std::size_t i = 0; i < frame_spans_.size(); ++i) {
    if (frame_spans_[i].length() < 1) {
      fail(ErrorCode::kInvalidLayout,
           "frame " + std::to_string(i) + " has no tokens");
    }
    if (i > 0 && frame_spans_[i].begin != frame_spans_[i - 1].end) {
      fail(ErrorCode::kInvalidLayout,
           "frames must be contiguous and in temporal order");
    }
  }
  std::erase_if(text_spans_, [](const Span& s) { return s.length() == 0; });
  for (const Span& s : text_spans_) {
    if (s.length() < 0) fail(ErrorCode::kInvalidLayout, "negative text span");
  }
  std::sort(text_spans_.begin(), text_spans_.end(),
            [](const Span& a, const Span& b) { return a.begin < b.begin; });

  // Exact cover of [0, total_len): merge all spans by start and walk.
  std::vector<Span> all = text_spans_;
  all.push_back({frame_spans_.front().begin, frame_spans_.back().end});
  std::sort(all.begin(), all.end(),
            [](const Span& a, const Span& b) { return a.begin < b.begin; });
  std::int64_t cursor = 0;
  for (const Span& s : all) {
    if (s.begin != cursor) {
      fail(ErrorCode::kInvalidLayout,
           "spans must cover the sequence exactly once (gap or overlap at " +
               std::to_string(cursor) + ")");
    }
    cursor = s.end;
  }
  total_len_ = cursor;

  std::sort(excluded_queries_.begin(), excluded_queries_.end());
  excluded_queries_.erase(
      std::unique(excluded_queries_.begin(), excluded_queries_.end()),
      excluded_queries_.end());
  for (std::int64_t q : excluded_queries_) {
    if (q < 0 || q >= total_len_) {
      fail(ErrorCode::kInvalidLayout, "excluded query outside the sequence");
    }
  }
}

FrameLayout FrameLayout::uniform(std::size_t num_frames,
                                 std::int64_t tokens_per_frame,
                                 std::int64_t text_before,
                                 std::int64_t text_after) {
  std::vector<std::int64_t> sizes(num_frames, tokens_per_frame);
  return from_frame_sizes(sizes, text_before, text_after);
}

FrameLayout FrameLayout::from_frame_sizes(std::span<const std::int64_t> sizes,
                                          std::int64_t text_before,
                                          std::int64_t text_after) {
  if (text_before < 0 || text_after < 0) {
    fail(ErrorCode::kInvalidLayout, "negative text length");
  }
  std::vector<Span> frames;
  std::int64_t pos = text_before;
  for (std::int64_t m : sizes) {
    frames.push_back({pos, pos + m});
    pos += m;
  }
  std::vector<Span> text;
  if (text_before > 0) text.push_back({0, text_before});
  if (text_after > 0) text.push_back({pos, pos + text_after});
  return FrameLayout(std::move(frames), std::move(text));
}

std::int64_t FrameLayout::visual_begin() const {
  return frame_spans_.empty() ? 0 : frame_spans_.front().begin;
}

std::int64_t FrameLayout::visual_end() const {
  return frame_spans_.empty() ? 0 : frame_spans_.back().end;
}

std::optional<std::size_t> FrameLayout::frame_of_token(std::int64_t j) const {
  if (j < 0 || j >= total_len_) {
    fail(ErrorCode::kOutOfRange,
         "position " + std::to_string(j) + " outside [0, " +
             std::to_string(total_len_) + ")");
  }
  if (!is_visual(j)) return std::nullopt;
  auto it = std::upper_bound(
      frame_spans_.begin(), frame_spans_.end(), j,
      [](std::int64_t pos, const Span& s) { return pos < s.end; });
  return static_cast<std::size_t>(it - frame_spans_.begin());
}

FrameLayout FrameLayout::with_appended_text(std::int64_t count) const {
  if (count <= 0) return *this;
  std::vector<Span> text = text_spans_;
  if (!text.empty() && text.back().end == total_len_) {
    text.back().end += count;
  } else {
    text.push_back({total_len_, total_len_ + count});
  }
  return FrameLayout(frame_spans_, std::move(text), excluded_queries_);
}

Stage Stage::decode(std::int64_t step) {
  if (step < 0) fail(ErrorCode::kOutOfRange, "decode step must be >= 0");
  return Stage(step);
}

std::int64_t sequence_length(const FrameLayout& layout, const Stage& stage) {
  return stage.is_prefill() ? layout.total_len()
                            : layout.total_len() + stage.step() + 1;
}

QueryPlan build_query_plan(const FrameLayout& layout, const Stage& stage) {
  if (layout.empty()) fail(ErrorCode::kEmptyLayout, "layout has no tokens");
  QueryPlan plan;
  if (!stage.is_prefill()) {
    plan.target_query = layout.total_len() + stage.step();
    plan.score_queries = {plan.target_query};
    return plan;
  }
  const auto& excluded = layout.excluded_queries();
  for (std::int64_t q = layout.visual_end(); q < layout.total_len(); ++q) {
    if (!std::binary_search(excluded.begin(), excluded.end(), q)) {
      plan.score_queries.push_back(q);
    }
  }
  if (plan.score_queries.empty()) {
    fail(ErrorCode::kNoPostVisualText,
         "prefill needs a text position after the visual block");
  }
  plan.target_query = layout.total_len() - 1;
  return plan;
}

QueryPlan target_only(const QueryPlan& plan) {
  return QueryPlan{{plan.target_query}, plan.target_query};
}

}  // namespace dtr
