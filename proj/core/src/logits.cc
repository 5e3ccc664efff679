// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "dtr/logits.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "dtr/error.h"

namespace dtr {

LayerLogits::LayerLogits(std::int64_t heads,
                         std::vector<std::int64_t> query_positions,
                         std::int64_t keys, double fill)
    : heads_(heads), keys_(keys), query_positions_(std::move(query_positions)) {
  if (heads < 0 || keys < 0) {
    fail(ErrorCode::kShapeMismatch, "negative logit dimensions");
  }
  values_.assign(static_cast<std::size_t>(heads_ * num_rows() * keys_), fill);
}

std::optional<std::int64_t> LayerLogits::row_of(std::int64_t q) const {
  auto it = std::find(query_positions_.begin(), query_positions_.end(), q);
  if (it == query_positions_.end()) return std::nullopt;
  return it - query_positions_.begin();
}

void LogitTensor::add_layer(int layer_id, LayerLogits logits) {
  if (find(layer_id) != nullptr) {
    fail(ErrorCode::kShapeMismatch, "duplicate layer id");
  }
  layer_ids_.push_back(layer_id);
  layers_.push_back(std::move(logits));
}

const LayerLogits* LogitTensor::find(int layer_id) const {
  auto it = std::find(layer_ids_.begin(), layer_ids_.end(), layer_id);
  if (it == layer_ids_.end()) return nullptr;
  return &layers_[static_cast<std::size_t>(it - layer_ids_.begin())];
}

LayerLogits* LogitTensor::find(int layer_id) {
  return const_cast<LayerLogits*>(std::as_const(*this).find(layer_id));
}

void softmax(std::span<const double> logits, std::span<double> out) {
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    if (!is_masked(z)) max_logit = std::max(max_logit, z);
  }
  if (std::isinf(max_logit)) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = is_masked(logits[j]) ? 0.0 : std::exp(logits[j] - max_logit);
    total += out[j];
  }
  for (double& w : out) w /= total;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  softmax(logits, out);
  return out;
}

LayerLogits softmax_rows(const LayerLogits& logits) {
  LayerLogits weights(logits.heads(), logits.query_positions(), logits.keys());
  for (std::int64_t h = 0; h < logits.heads(); ++h) {
    for (std::int64_t r = 0; r < logits.num_rows(); ++r) {
      softmax(logits.row(h, r), weights.row(h, r));
    }
  }
  return weights;
}

}  // namespace dtr
