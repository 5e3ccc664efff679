// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>
#include <span>
#include <string>

#include "dtr/anchor_analysis.h"

namespace dtr {

// Fixed-precision decimal used in every CSV the project writes.
std::string format_number(double v);

nlohmann::json report_to_json(const AnchorReport& report);

// sample_id,anchor,dominance,entropy,non_anchor,visual_ratio_l<id>...
std::string report_csv_header(std::span<const int> layers);
std::string report_csv_row(const AnchorReport& report);

}  // namespace dtr
