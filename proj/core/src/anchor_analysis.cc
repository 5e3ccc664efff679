// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "dtr/anchor_analysis.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "dtr/error.h"

namespace dtr {
namespace {

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::vector<double> normalized(std::span<const double> mass, int layer) {
  double total = 0.0;
  for (double a : mass) total += a;
  if (!(total > 0.0)) {
    fail(ErrorCode::kZeroVisualMass,
         "no visual attention mass at layer " + std::to_string(layer));
  }
  std::vector<double> p(mass.begin(), mass.end());
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

AveragedLogits averaged_logits(const LogitTensor& logits, const QueryPlan& plan,
                               std::span<const int> layers) {
  if (plan.score_queries.empty()) {
    fail(ErrorCode::kEmptyQuerySet, "no score queries to average");
  }
  std::vector<int> ids(layers.begin(), layers.end());
  if (ids.empty()) ids = logits.layer_ids();
  if (ids.empty()) fail(ErrorCode::kEmptyLayerSet, "no layers to average");

  const std::int64_t key_end =
      *std::min_element(plan.score_queries.begin(), plan.score_queries.end()) +
      1;
  AveragedLogits out;
  for (int id : ids) {
    const LayerLogits* layer = logits.find(id);
    if (layer == nullptr) {
      fail(ErrorCode::kMissingLayers,
           "layer " + std::to_string(id) + " not recorded");
    }
    if (key_end > layer->keys()) {
      fail(ErrorCode::kShapeMismatch, "score query beyond recorded keys");
    }
    std::vector<std::int64_t> rows;
    for (std::int64_t q : plan.score_queries) {
      auto r = layer->row_of(q);
      if (!r) {
        fail(ErrorCode::kShapeMismatch,
             "score query " + std::to_string(q) + " not recorded");
      }
      rows.push_back(*r);
    }
    std::vector<double> avg(static_cast<std::size_t>(key_end), 0.0);
    std::vector<bool> masked(avg.size(), false);
    for (std::int64_t r : rows) {
      for (std::int64_t h = 0; h < layer->heads(); ++h) {
        auto row = layer->row(h, r);
        for (std::int64_t j = 0; j < key_end; ++j) {
          if (is_masked(row[j])) {
            masked[j] = true;
          } else {
            avg[j] += row[j];
          }
        }
      }
    }
    const double denom =
        static_cast<double>(layer->heads()) * static_cast<double>(rows.size());
    for (std::size_t j = 0; j < avg.size(); ++j) {
      avg[j] = masked[j] ? kMaskedLogit : avg[j] / denom;
    }
    out.layers.push_back(id);
    out.values.push_back(std::move(avg));
  }
  return out;
}

std::vector<double> FrameMassTable::layer_mean() const {
  std::vector<double> mean(num_frames(), 0.0);
  for (const auto& row : mass) {
    for (std::size_t i = 0; i < row.size(); ++i) mean[i] += row[i];
  }
  for (double& v : mean) v /= static_cast<double>(mass.size());
  return mean;
}

FrameMassTable frame_mass(const AveragedLogits& averaged,
                          const FrameLayout& layout) {
  FrameMassTable table;
  table.layers = averaged.layers;
  for (const auto& z : averaged.values) {
    if (static_cast<std::int64_t>(z.size()) < layout.visual_end()) {
      fail(ErrorCode::kShapeMismatch,
           "averaged logits do not cover the visual block");
    }
    std::vector<double> p = softmax(z);
    std::vector<double> mass(layout.num_frames(), 0.0);
    double visual = 0.0;
    for (std::size_t i = 0; i < layout.num_frames(); ++i) {
      const Span& s = layout.frame_span(i);
      for (std::int64_t j = s.begin; j < s.end; ++j) mass[i] += p[j];
      visual += mass[i];
    }
    table.mass.push_back(std::move(mass));
    table.visual_ratio.push_back(visual);
  }
  return table;
}

std::size_t select_anchor(const FrameMassTable& masses) {
  if (masses.mass.empty()) {
    fail(ErrorCode::kEmptyLayerSet, "no analyzed layers");
  }
  return argmax_lowest(masses.layer_mean());
}

double distribution_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

AnchorReport attention_stats(const FrameMassTable& masses,
                             std::optional<std::size_t> reference_anchor) {
  if (masses.mass.empty()) {
    fail(ErrorCode::kEmptyLayerSet, "no analyzed layers");
  }
  const std::size_t n = masses.num_frames();
  if (reference_anchor && *reference_anchor >= n) {
    fail(ErrorCode::kFrameOutOfRange, "reference anchor outside frame range");
  }
  AnchorReport report;
  report.anchor = select_anchor(masses);
  report.reference_anchor = reference_anchor.value_or(report.anchor);

  for (std::size_t k = 0; k < masses.mass.size(); ++k) {
    LayerStats s;
    s.layer = masses.layers[k];
    s.distribution = normalized(masses.mass[k], s.layer);
    s.dominance = *std::max_element(s.distribution.begin(), s.distribution.end());
    s.entropy = distribution_entropy(s.distribution);
    s.non_anchor = 1.0 - s.distribution[report.reference_anchor];
    s.visual_ratio = masses.visual_ratio[k];
    report.per_layer.push_back(std::move(s));
  }

  report.distribution = normalized(masses.layer_mean(), -1);
  report.dominance = report.distribution[argmax_lowest(report.distribution)];
  report.entropy = distribution_entropy(report.distribution);
  report.non_anchor = 1.0 - report.distribution[report.reference_anchor];
  return report;
}

std::vector<double> anchor_histogram(std::span<const AnchorReport> reports) {
  if (reports.empty()) fail(ErrorCode::kEmptyInput, "no reports");
  const std::size_t n = reports.front().num_frames();
  std::vector<double> freq(n, 0.0);
  for (const AnchorReport& r : reports) {
    if (r.num_frames() != n) {
      fail(ErrorCode::kMixedFrameCounts,
           "report " + r.sample_id + " has " + std::to_string(r.num_frames()) +
               " frames, expected " + std::to_string(n));
    }
    freq[r.anchor] += 1.0;
  }
  for (double& f : freq) f /= static_cast<double>(reports.size());
  return freq;
}

AnchorReport analyze_logits(const LogitTensor& logits,
                            const FrameLayout& layout, const QueryPlan& plan,
                            std::span<const int> layers,
                            std::optional<std::size_t> reference_anchor) {
  return attention_stats(frame_mass(averaged_logits(logits, plan, layers), layout),
                         reference_anchor);
}

}  // namespace dtr
