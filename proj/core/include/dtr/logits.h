// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dtr {

// Stand-in for -inf. Stored as-is in traces; softmax maps it to exactly 0.
inline constexpr double kMaskedLogit = -3.4e38;

// float(kMaskedLogit) widens to slightly above kMaskedLogit, hence the
// looser threshold.
inline bool is_masked(double z) { return z <= -3.0e38; }

// Pre-softmax logits of one decoder layer for a set of recorded query rows,
// row-major (head, query row, key).
class LayerLogits {
 public:
  LayerLogits() = default;
  LayerLogits(std::int64_t heads, std::vector<std::int64_t> query_positions,
              std::int64_t keys, double fill = 0.0);

  std::int64_t heads() const { return heads_; }
  std::int64_t keys() const { return keys_; }
  std::int64_t num_rows() const {
    return static_cast<std::int64_t>(query_positions_.size());
  }
  const std::vector<std::int64_t>& query_positions() const {
    return query_positions_;
  }

  // Row index of absolute query position q, if recorded.
  std::optional<std::int64_t> row_of(std::int64_t q) const;

  std::span<double> row(std::int64_t head, std::int64_t r) {
    return {values_.data() + offset(head, r), static_cast<std::size_t>(keys_)};
  }
  std::span<const double> row(std::int64_t head, std::int64_t r) const {
    return {values_.data() + offset(head, r), static_cast<std::size_t>(keys_)};
  }
  double& at(std::int64_t head, std::int64_t r, std::int64_t j) {
    return values_[offset(head, r) + j];
  }
  double at(std::int64_t head, std::int64_t r, std::int64_t j) const {
    return values_[offset(head, r) + j];
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool operator==(const LayerLogits&) const = default;

 private:
  std::size_t offset(std::int64_t head, std::int64_t r) const {
    return static_cast<std::size_t>((head * num_rows() + r) * keys_);
  }

  std::int64_t heads_ = 0;
  std::int64_t keys_ = 0;
  std::vector<std::int64_t> query_positions_;
  std::vector<double> values_;
};

// Logits indexed [layer, head, query, key]. Holds either every decoder layer
// (engine output) or a recorded subset (traces); `layer_ids` names them.
class LogitTensor {
 public:
  LogitTensor() = default;

  void add_layer(int layer_id, LayerLogits logits);

  std::size_t size() const { return layers_.size(); }
  const std::vector<int>& layer_ids() const { return layer_ids_; }
  LayerLogits& layer_at(std::size_t index) { return layers_[index]; }
  const LayerLogits& layer_at(std::size_t index) const {
    return layers_[index];
  }

  // nullptr when the layer was not recorded.
  const LayerLogits* find(int layer_id) const;
  LayerLogits* find(int layer_id);

  bool operator==(const LogitTensor&) const = default;

 private:
  std::vector<int> layer_ids_;
  std::vector<LayerLogits> layers_;
};

// Numerically stable softmax; masked entries get exactly 0. A fully masked
// row yields all zeros.
void softmax(std::span<const double> logits, std::span<double> out);
std::vector<double> softmax(std::span<const double> logits);

// Attention weights for every row of `logits`.
LayerLogits softmax_rows(const LayerLogits& logits);

}  // namespace dtr
