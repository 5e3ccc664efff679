// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "dtr/synthetic.h"

#include "dtr/error.h"

namespace dtr {

Sample make_sample(const SyntheticSpec& spec, std::size_t index) {
  if (spec.kind == GeneratorKind::kAnchorDominant &&
      spec.target_frame >= spec.num_frames) {
    fail(ErrorCode::kFrameOutOfRange, "target frame outside frame range");
  }
  Sample s;
  s.id = "sample-" + std::to_string(index);
  s.layout = FrameLayout::uniform(spec.num_frames, spec.tokens_per_frame,
                                  spec.text_before, spec.text_after);
  s.input.embeddings = generate_embeddings(s.layout.total_len(), spec.model_dim,
                                           spec.seed + index);
  if (spec.kind == GeneratorKind::kAnchorDominant) {
    s.input.key_bias.assign(static_cast<std::size_t>(s.layout.total_len()), 0.0);
    for (std::size_t i = 0; i < spec.num_frames; ++i) {
      const Span& span = s.layout.frame_span(i);
      const double prior =
          spec.visual_offset + (i == spec.target_frame ? spec.delta : 0.0);
      for (std::int64_t j = span.begin; j < span.end; ++j) {
        s.input.key_bias[static_cast<std::size_t>(j)] = prior;
      }
    }
  }
  return s;
}

std::vector<Sample> make_samples(const SyntheticSpec& spec, std::size_t count) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(make_sample(spec, k));
  return out;
}

}  // namespace dtr
