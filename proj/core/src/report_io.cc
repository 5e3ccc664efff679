// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "dtr/report_io.h"

#include <fmt/format.h>

namespace dtr {

std::string format_number(double v) { return fmt::format("{:.10g}", v); }

nlohmann::json report_to_json(const AnchorReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerStats& s : report.per_layer) {
    layers.push_back({{"layer", s.layer},
                      {"distribution", s.distribution},
                      {"dominance", s.dominance},
                      {"entropy", s.entropy},
                      {"non_anchor", s.non_anchor},
                      {"visual_ratio", s.visual_ratio}});
  }
  return {{"sample_id", report.sample_id},
          {"label", report.label},
          {"anchor", report.anchor},
          {"reference_anchor", report.reference_anchor},
          {"distribution", report.distribution},
          {"dominance", report.dominance},
          {"entropy", report.entropy},
          {"non_anchor", report.non_anchor},
          {"layers", layers}};
}

std::string report_csv_header(std::span<const int> layers) {
  std::string out = "sample_id,anchor,dominance,entropy,non_anchor";
  for (int l : layers) out += fmt::format(",visual_ratio_l{}", l);
  return out;
}

std::string report_csv_row(const AnchorReport& report) {
  std::string out = fmt::format("{},{},{},{},{}", report.sample_id, report.anchor,
                                format_number(report.dominance),
                                format_number(report.entropy),
                                format_number(report.non_anchor));
  for (const LayerStats& s : report.per_layer) {
    out += ',';
    out += format_number(s.visual_ratio);
  }
  return out;
}

}  // namespace dtr
