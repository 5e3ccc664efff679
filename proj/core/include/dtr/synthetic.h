// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dtr/attention_engine.h"
#include "dtr/frame_layout.h"

namespace dtr {

struct Sample {
  std::string id;
  FrameLayout layout;
  ForwardInput input;
};

enum class GeneratorKind {
  // Seed-generated embeddings, no key prior.
  kRandom,
  // Seed-generated embeddings plus a key prior: every visual key gets
  // `visual_offset`, the target frame additionally gets `delta`.
  kAnchorDominant,
};

struct SyntheticSpec {
  GeneratorKind kind = GeneratorKind::kAnchorDominant;
  std::size_t num_frames = 8;
  std::int64_t tokens_per_frame = 4;
  std::int64_t text_before = 4;
  std::int64_t text_after = 8;
  int model_dim = 32;
  std::uint64_t seed = 0;
  double delta = 3.0;
  double visual_offset = -4.0;
  std::size_t target_frame = 0;
};

// Sample k is seeded with spec.seed + k.
Sample make_sample(const SyntheticSpec& spec, std::size_t index);
std::vector<Sample> make_samples(const SyntheticSpec& spec, std::size_t count);

}  // namespace dtr
