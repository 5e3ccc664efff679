// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dtr/frame_layout.h"
#include "dtr/logits.h"

namespace dtr {

// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::int64_t rows, std::int64_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols),
        data_(static_cast<std::size_t>(rows * cols), fill) {}

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::span<double> row(std::int64_t i) {
    return {data_.data() + i * cols_, static_cast<std::size_t>(cols_)};
  }
  std::span<const double> row(std::int64_t i) const {
    return {data_.data() + i * cols_, static_cast<std::size_t>(cols_)};
  }
  double& operator()(std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(i * cols_ + j)];
  }
  double operator()(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * cols_ + j)];
  }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  // Appends one row; cols() must match.
  void append_row(std::span<const double> values);

  bool operator==(const Matrix&) const = default;

 private:
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::vector<double> data_;
};

struct ModelConfig {
  int num_layers = 4;
  int num_heads = 4;
  int model_dim = 32;
  std::uint64_t seed = 0;
  // Feed-forward hidden width is ffn_mult * model_dim.
  int ffn_mult = 2;
};

// Weights of one pre-norm block: RMSNorm -> attention -> residual,
// RMSNorm -> SiLU MLP -> residual. Projections map row vectors
// (x * W + b), W stored (in_dim x out_dim).
struct BlockWeights {
  std::vector<double> attn_norm;
  Matrix wq, wk, wv, wo;
  std::vector<double> bq, bk, bv, bo;
  std::vector<double> ffn_norm;
  Matrix w1, w2;
  std::vector<double> b1, b2;
};

// Deterministic toy decoder. Immutable once built.
//
// Weights are drawn in a fixed order (per block: wq, bq, wk, bk, wv, bv,
// wo, bo, w1, b1, w2, b2) from std::mt19937_64 seeded with config.seed.
// Each draw maps the top 53 bits to u in [0, 1) and the weight is
// (2u - 1) / sqrt(fan_in); biases use 0.1 instead of 1 / sqrt(fan_in).
// Norm gains are 1.
class Model {
 public:
  // Throws kInvalidDim on a bad config.
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<BlockWeights>& blocks() const { return blocks_; }
  std::int64_t head_dim() const { return config_.model_dim / config_.num_heads; }
  // Fingerprint of (config, seed); equal fingerprints imply equal weights.
  std::uint64_t id() const { return id_; }

 private:
  ModelConfig config_;
  std::vector<BlockWeights> blocks_;
  std::uint64_t id_ = 0;
};

Model init_model(const ModelConfig& config);

struct ForwardInput {
  // One d-vector per position.
  Matrix embeddings;
  // Optional additive logit prior per key position (empty means zero).
  // It is part of the raw logits hooks observe.
  std::vector<double> key_bias;
};

struct HookContext {
  int layer = 0;
  int num_layers = 0;
  Stage stage = Stage::prefill();
  const FrameLayout* layout = nullptr;
  const QueryPlan* plan = nullptr;
};

// Called once per layer with that layer's logits; may rewrite them in place
// before softmax. The logits arrive causally masked.
using LogitHook = std::function<void(const HookContext&, LayerLogits&)>;

// Applies hooks in order; each sees the previous one's output.
LogitHook compose_hooks(std::vector<LogitHook> hooks);

// Key/value cache for incremental decoding. Single-owner.
class CachedState {
 public:
  std::uint64_t model_id() const { return model_id_; }
  const FrameLayout& layout() const { return layout_; }
  std::int64_t length() const;
  std::int64_t steps_done() const { return steps_done_; }
  // Additive key prior at position j (0 past the prefill sequence).
  double key_bias(std::int64_t j) const;

 private:
  friend class Engine;
  std::uint64_t model_id_ = 0;
  FrameLayout layout_;
  std::vector<double> key_bias_;
  std::int64_t steps_done_ = 0;
  std::vector<Matrix> keys_;    // per layer, (positions x model_dim)
  std::vector<Matrix> values_;  // per layer
};

struct ForwardResult {
  LogitTensor original;
  LogitTensor modified;
  LogitTensor weights;
  // Final-norm hidden states of the computed rows.
  Matrix hidden;
  CachedState cache;
};

ForwardResult prefill(const Model& model, const ForwardInput& input,
                      const FrameLayout& layout, const LogitHook& hook = {});

// Computes the next row against the cache and extends it in place. The row
// attends to every prior position and itself.
ForwardResult decode_step(const Model& model, CachedState& state,
                          std::span<const double> embedding,
                          const LogitHook& hook = {});

// Seed-generated embeddings, one row per position. Row j is drawn from
// mt19937_64 seeded with splitmix64(seed ^ splitmix64(j)), uniform in [-1, 1).
Matrix generate_embeddings(std::int64_t positions, int model_dim,
                           std::uint64_t seed);

}  // namespace dtr
