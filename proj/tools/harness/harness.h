// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dtr/anchor_analysis.h"
#include "dtr/attention_engine.h"
#include "dtr/dtr_rebalance.h"
#include "dtr/synthetic.h"

namespace dtr::harness {

inline constexpr std::string_view kVersion = "0.1.0";

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct LayerWindow {
  int start = 0;
  int end = 0;
  bool operator==(const LayerWindow&) const = default;
};

// "A:B" -> {A, B}. Throws kInvalidConfig.
LayerWindow parse_window(const std::string& text);

// Middle-to-late default: [round(18 L / 32), L - 1], i.e. 18-31 at L = 32.
LayerWindow default_window(int num_layers);

struct NamedPreset {
  std::string name;
  double alpha = 0.0;
  double beta = 0.0;
};

// baseline (0, 0), global (0.5, 0), comp (0, 0.3), dtr (0.5, 0.3).
const std::vector<NamedPreset>& presets();
NamedPreset find_preset(const std::string& name);

struct SimulateOptions {
  ModelConfig model;
  SyntheticSpec synthetic;
  std::size_t samples = 10;
  std::vector<double> alphas = {0.5};
  std::vector<double> betas = {0.4};
  std::vector<LayerWindow> windows;  // empty -> default_window
  double epsilon = 1e-6;
  int decode_steps = 0;
  std::vector<int> analysis_layers;  // empty -> all layers
  std::filesystem::path out_dir = "out";
  std::string run_id;                // empty -> "run-<seed>"
  bool emit_traces = false;
  std::size_t workers = 1;
};

struct GridRow {
  DtrConfig config;
  double dominance = 0.0;
  double entropy = 0.0;
  double non_anchor = 0.0;
  double delta_dominance = 0.0;
  double delta_entropy = 0.0;
  double delta_non_anchor = 0.0;
  std::vector<AnchorReport> samples;
};

struct SimulateResult {
  std::filesystem::path run_dir;
  std::vector<AnchorReport> baseline;
  std::vector<GridRow> grid;
};

// Per sample: baseline prefill (+ decode steps) without a hook, then one
// run per (alpha, beta, window) grid point with the DTR hook. Statistics
// use the target row of each stage; non-anchor mass is measured against
// the sample's baseline anchor. Writes summary.csv, samples.csv,
// baseline.csv and config.json under out_dir/run_id.
SimulateResult cmd_simulate(const SimulateOptions& options);

// Canonical one-line description of the options, used as provenance.
std::string describe(const SimulateOptions& options);

struct AnalyzeOptions {
  std::vector<std::filesystem::path> inputs;  // files or directories
  std::filesystem::path out_dir = "out/analyze";
  bool lenient = false;
};

struct AnalyzeResult {
  std::vector<AnchorReport> reports;
  std::vector<double> histogram;
  std::vector<std::pair<std::string, std::string>> failures;  // path, error
  int exit_code = kExitOk;
};

// One report per readable trace, an anchor histogram across traces and a
// layer-wise visual-ratio table. Unreadable traces are listed and skipped.
AnalyzeResult cmd_analyze(const AnalyzeOptions& options);

struct ReplayCommandOptions {
  std::vector<std::filesystem::path> inputs;
  // Each entry is one configuration to replay. Window end < 0 means
  // "use the default window for the trace's depth".
  std::vector<std::pair<std::string, DtrConfig>> configs;
  std::filesystem::path out_dir = "out/replay";
  bool lenient = false;
};

struct ReplayRow {
  std::string name;
  DtrConfig config;
  double before_dominance = 0.0, after_dominance = 0.0;
  double before_entropy = 0.0, after_entropy = 0.0;
  double before_non_anchor = 0.0, after_non_anchor = 0.0;
  std::vector<std::pair<AnchorReport, AnchorReport>> traces;
};

struct ReplayCommandResult {
  std::vector<ReplayRow> rows;
  std::vector<std::pair<std::string, std::string>> failures;
  int exit_code = kExitOk;
};

ReplayCommandResult cmd_replay(const ReplayCommandOptions& options);

struct MaskStudyOptions {
  ModelConfig model;
  SyntheticSpec synthetic;
  std::size_t samples = 10;
  LayerWindow window{1, -1};
  std::size_t fixed_frame = 3;
  std::filesystem::path out_dir = "out/mask-study";
  std::size_t workers = 1;
};

int cmd_mask_study(const MaskStudyOptions& options);

struct BlackFrameOptions {
  ModelConfig model;
  SyntheticSpec synthetic;
  std::size_t samples = 10;
  std::filesystem::path out_dir = "out/black-frame";
  std::size_t workers = 1;
};

int cmd_black_frame(const BlackFrameOptions& options);

// Collects *.atrc files; directories are scanned (non-recursively) and
// sorted by name.
std::vector<std::filesystem::path> collect_traces(
    const std::vector<std::filesystem::path>& inputs);

// Full command-line entry point.
int run_cli(int argc, char** argv);

}  // namespace dtr::harness
