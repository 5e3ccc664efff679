// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "dtr/dtr_rebalance.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dtr/error.h"

namespace dtr {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    fail(ErrorCode::kInvalidConfig, "bad value for " + key + ": '" + v + "'");
  }
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    fail(ErrorCode::kInvalidConfig, "bad value for " + key + ": '" + v + "'");
  }
  return out;
}

}  // namespace

void DtrConfig::validate(int num_layers) const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) {
    fail(ErrorCode::kInvalidConfig, "alpha and beta must be >= 0");
  }
  if (!(epsilon > 0.0)) fail(ErrorCode::kInvalidConfig, "epsilon must be > 0");
  if (layer_start < 0 || layer_start > layer_end || layer_end >= num_layers) {
    fail(ErrorCode::kLayerWindowOutOfRange,
         "window [" + std::to_string(layer_start) + ", " +
             std::to_string(layer_end) + "] does not fit " +
             std::to_string(num_layers) + " layers");
  }
}

DtrConfig parse_dtr_config(std::istream& in, DtrConfig base) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kInvalidConfig,
           "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "alpha") {
      base.alpha = parse_double(key, value);
    } else if (key == "beta") {
      base.beta = parse_double(key, value);
    } else if (key == "epsilon") {
      base.epsilon = parse_double(key, value);
    } else if (key == "layer_start") {
      base.layer_start = parse_int(key, value);
    } else if (key == "layer_end") {
      base.layer_end = parse_int(key, value);
    } else {
      fail(ErrorCode::kInvalidConfig, "unknown key '" + key + "'");
    }
  }
  return base;
}

DtrConfig load_dtr_config(const std::string& path, DtrConfig base) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config " + path);
  return parse_dtr_config(in, base);
}

std::vector<std::optional<double>> frame_scores(const LayerLogits& logits,
                                                const FrameLayout& layout,
                                                const QueryPlan& plan) {
  if (plan.score_queries.empty()) {
    fail(ErrorCode::kEmptyQuerySet, "no score queries");
  }
  if (logits.keys() < layout.visual_end()) {
    fail(ErrorCode::kShapeMismatch, "logits do not cover the visual block");
  }
  std::vector<std::int64_t> rows;
  rows.reserve(plan.score_queries.size());
  for (std::int64_t q : plan.score_queries) {
    auto r = logits.row_of(q);
    if (!r) {
      fail(ErrorCode::kShapeMismatch,
           "score query " + std::to_string(q) + " not in logits");
    }
    rows.push_back(*r);
  }

  std::vector<std::optional<double>> scores(layout.num_frames());
  for (std::size_t i = 0; i < layout.num_frames(); ++i) {
    const Span& span = layout.frame_span(i);
    double frame_sum = 0.0;
    std::int64_t tokens = 0;
    for (std::int64_t j = span.begin; j < span.end; ++j) {
      double token_sum = 0.0;
      std::int64_t count = 0;
      for (std::int64_t r : rows) {
        for (std::int64_t h = 0; h < logits.heads(); ++h) {
          const double z = logits.at(h, r, j);
          if (is_masked(z)) continue;
          token_sum += z;
          ++count;
        }
      }
      if (count == 0) continue;
      frame_sum += token_sum / static_cast<double>(count);
      ++tokens;
    }
    if (tokens > 0) scores[i] = frame_sum / static_cast<double>(tokens);
  }
  return scores;
}

FrameBias gaps_and_bias(std::span<const std::optional<double>> scores,
                        const DtrConfig& config) {
  const std::size_t n = scores.size();
  FrameBias out;
  out.gap.assign(n, 0.0);
  out.normalized_gap.assign(n, 0.0);
  out.bias.assign(n, 0.0);
  out.active.assign(n, false);

  std::optional<double> top;
  for (const auto& s : scores) {
    if (s && (!top || *s > *top)) top = *s;
  }
  if (!top) return out;

  double max_gap = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!scores[i]) continue;
    out.active[i] = true;
    out.gap[i] = *top - *scores[i];
    max_gap = std::max(max_gap, out.gap[i]);
  }
  const double denom = max_gap + config.epsilon;
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.active[i]) continue;
    out.normalized_gap[i] = out.gap[i] / denom;
    out.bias[i] = config.alpha + config.beta * out.normalized_gap[i];
  }
  return out;
}

FrameBias gaps_and_bias(std::span<const double> scores,
                        const DtrConfig& config) {
  std::vector<std::optional<double>> wrapped(scores.begin(), scores.end());
  return gaps_and_bias(std::span<const std::optional<double>>(wrapped), config);
}

void inject_bias(std::span<double> row, const FrameLayout& layout,
                 std::span<const double> bias) {
  if (bias.size() != layout.num_frames()) {
    fail(ErrorCode::kShapeMismatch, "one bias per frame required");
  }
  if (static_cast<std::int64_t>(row.size()) < layout.visual_end()) {
    fail(ErrorCode::kShapeMismatch, "row does not cover the visual block");
  }
  for (std::size_t i = 0; i < layout.num_frames(); ++i) {
    const double b = bias[i];
    if (b == 0.0) continue;
    const Span& span = layout.frame_span(i);
    for (std::int64_t j = span.begin; j < span.end; ++j) {
      double& z = row[static_cast<std::size_t>(j)];
      if (is_masked(z)) continue;
      z += b * std::abs(z);
    }
  }
}

LayerScoreState rebalance_layer(LayerLogits& logits, const FrameLayout& layout,
                                const QueryPlan& plan, const DtrConfig& config,
                                int layer) {
  LayerScoreState state;
  state.layer = layer;
  state.scores = frame_scores(logits, layout, plan);
  state.bias = gaps_and_bias(
      std::span<const std::optional<double>>(state.scores), config);
  auto target = logits.row_of(plan.target_query);
  if (!target) {
    fail(ErrorCode::kShapeMismatch, "target query not in logits");
  }
  for (std::int64_t h = 0; h < logits.heads(); ++h) {
    inject_bias(logits.row(h, *target), layout, state.bias.bias);
  }
  return state;
}

LogitHook make_dtr_hook(const DtrConfig& config, const FrameLayout& layout,
                        int num_layers) {
  config.validate(num_layers);
  return [config, layout](const HookContext& ctx, LayerLogits& logits) {
    if (!config.in_window(ctx.layer) || config.is_identity()) return;
    // Decode rows carry only the target, which is also the score query.
    rebalance_layer(logits, layout, *ctx.plan, config, ctx.layer);
  };
}

std::vector<double> single_row_bias(std::span<const double> row_major,
                                    std::int64_t heads,
                                    const FrameLayout& layout,
                                    const DtrConfig& config) {
  if (heads < 1 || row_major.size() % static_cast<std::size_t>(heads) != 0) {
    fail(ErrorCode::kShapeMismatch, "buffer is not heads x keys");
  }
  const auto keys = static_cast<std::int64_t>(row_major.size()) / heads;
  LayerLogits logits(heads, {0}, keys);
  std::copy(row_major.begin(), row_major.end(), logits.values().begin());
  const QueryPlan plan{{0}, 0};
  auto scores = frame_scores(logits, layout, plan);
  return gaps_and_bias(std::span<const std::optional<double>>(scores), config)
      .bias;
}

}  // namespace dtr
