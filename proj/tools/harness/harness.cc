// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dtr/error.h"
#include "dtr/interventions.h"
#include "dtr/parallel.h"
#include "dtr/report_io.h"
#include "dtr/trace_io.h"

namespace dtr::harness {
namespace fs = std::filesystem;
namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

void write_provenance(std::ostream& out, const std::string& command,
                      const std::string& seed) {
  out << "# temporal_rebalance " << kVersion << '\n'
      << "# command: " << command << '\n'
      << "# seed: " << seed << '\n';
}

void write_provenance(std::ostream& out, const std::string& command,
                      std::uint64_t seed) {
  write_provenance(out, command, std::to_string(seed));
}

std::string join_paths(const std::vector<fs::path>& paths) {
  std::string out;
  for (const fs::path& p : paths) {
    if (!out.empty()) out += ' ';
    out += p.string();
  }
  return out;
}

std::string describe_study(const char* name, const ModelConfig& m,
                           const SyntheticSpec& s, std::size_t samples) {
  return fmt::format(
      "{} --num-layers {} --heads {} --dim {} --model-seed {} --generator {} "
      "--frames {} --tokens-per-frame {} --text-before {} --text-after {} "
      "--delta {} --visual-offset {} --target-frame {} --seed {} --samples {}",
      name, m.num_layers, m.num_heads, m.model_dim, m.seed,
      s.kind == GeneratorKind::kRandom ? "random" : "anchor", s.num_frames,
      s.tokens_per_frame, s.text_before, s.text_after, format_number(s.delta),
      format_number(s.visual_offset), s.target_frame, s.seed, samples);
}

std::string join_numbers(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_number(v[i]);
  }
  return out;
}

double mean_of(const std::vector<AnchorReport>& reports,
               double AnchorReport::*field) {
  double total = 0.0;
  for (const auto& r : reports) total += r.*field;
  return total / static_cast<double>(reports.size());
}

// Layer-wise mean of several mass tables over the same layers.
FrameMassTable mean_tables(const std::vector<FrameMassTable>& tables) {
  FrameMassTable out = tables.front();
  for (std::size_t t = 1; t < tables.size(); ++t) {
    for (std::size_t l = 0; l < out.mass.size(); ++l) {
      for (std::size_t i = 0; i < out.mass[l].size(); ++i) {
        out.mass[l][i] += tables[t].mass[l][i];
      }
      out.visual_ratio[l] += tables[t].visual_ratio[l];
    }
  }
  const double n = static_cast<double>(tables.size());
  for (std::size_t l = 0; l < out.mass.size(); ++l) {
    for (double& a : out.mass[l]) a /= n;
    out.visual_ratio[l] /= n;
  }
  return out;
}

// Prefill plus `decode_steps` single-row steps under `hook`; statistics on
// the target row of every stage, averaged across stages.
AnchorReport run_sample(const Model& model, const Sample& sample,
                        const LogitHook& hook, int decode_steps,
                        const Matrix& decode_embeddings,
                        std::span<const int> layers,
                        std::optional<std::size_t> reference) {
  ForwardResult result = prefill(model, sample.input, sample.layout, hook);
  const QueryPlan plan = build_query_plan(sample.layout, Stage::prefill());
  std::vector<FrameMassTable> tables;
  tables.push_back(frame_mass(
      averaged_logits(result.modified, target_only(plan), layers), sample.layout));
  CachedState cache = std::move(result.cache);
  for (int t = 0; t < decode_steps; ++t) {
    const ForwardResult row =
        decode_step(model, cache, decode_embeddings.row(t), hook);
    const QueryPlan dplan = build_query_plan(sample.layout, Stage::decode(t));
    tables.push_back(
        frame_mass(averaged_logits(row.modified, dplan, layers), sample.layout));
  }
  AnchorReport report = attention_stats(mean_tables(tables), reference);
  report.sample_id = sample.id;
  return report;
}

bool is_config_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kLayerWindowOutOfRange:
    case ErrorCode::kInvalidDim:
    case ErrorCode::kFrameOutOfRange:
    case ErrorCode::kInvalidLayout:
      return true;
    default:
      return false;
  }
}

}  // namespace

LayerWindow parse_window(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    fail(ErrorCode::kInvalidConfig, "layer window must look like A:B");
  }
  try {
    std::size_t used_a = 0, used_b = 0;
    const std::string a = text.substr(0, colon);
    const std::string b = text.substr(colon + 1);
    LayerWindow w{std::stoi(a, &used_a), std::stoi(b, &used_b)};
    if (used_a != a.size() || used_b != b.size()) throw std::invalid_argument(text);
    return w;
  } catch (const std::exception&) {
    fail(ErrorCode::kInvalidConfig, "bad layer window '" + text + "'");
  }
}

LayerWindow default_window(int num_layers) {
  const int start = static_cast<int>(std::lround(18.0 * num_layers / 32.0));
  return {std::min(start, num_layers - 1), num_layers - 1};
}

const std::vector<NamedPreset>& presets() {
  static const std::vector<NamedPreset> kPresets = {
      {"baseline", 0.0, 0.0},
      {"global", 0.5, 0.0},
      {"comp", 0.0, 0.3},
      {"dtr", 0.5, 0.3},
  };
  return kPresets;
}

NamedPreset find_preset(const std::string& name) {
  for (const auto& p : presets()) {
    if (p.name == name) return p;
  }
  fail(ErrorCode::kInvalidConfig, "unknown preset '" + name + "'");
}

std::string describe(const SimulateOptions& o) {
  std::string windows;
  for (const auto& w : o.windows) {
    if (!windows.empty()) windows += ',';
    windows += fmt::format("{}:{}", w.start, w.end);
  }
  return fmt::format(
      "simulate --num-layers {} --heads {} --dim {} --model-seed {} "
      "--generator {} --frames {} --tokens-per-frame {} --text-before {} "
      "--text-after {} --delta {} --visual-offset {} --target-frame {} "
      "--seed {} --samples {} --alpha {} --beta {} --layers {} --epsilon {} "
      "--decode-steps {}",
      o.model.num_layers, o.model.num_heads, o.model.model_dim, o.model.seed,
      o.synthetic.kind == GeneratorKind::kRandom ? "random" : "anchor",
      o.synthetic.num_frames, o.synthetic.tokens_per_frame,
      o.synthetic.text_before, o.synthetic.text_after,
      format_number(o.synthetic.delta), format_number(o.synthetic.visual_offset),
      o.synthetic.target_frame, o.synthetic.seed, o.samples,
      join_numbers(o.alphas), join_numbers(o.betas), windows,
      format_number(o.epsilon), o.decode_steps);
}

SimulateResult cmd_simulate(const SimulateOptions& options) {
  if (options.samples < 1) fail(ErrorCode::kInvalidConfig, "samples must be >= 1");
  if (options.alphas.empty() || options.betas.empty()) {
    fail(ErrorCode::kInvalidConfig, "alpha and beta grids must be non-empty");
  }
  if (options.decode_steps < 0) {
    fail(ErrorCode::kInvalidConfig, "decode steps must be >= 0");
  }
  const Model model(options.model);
  const int num_layers = options.model.num_layers;
  SimulateOptions opts = options;
  opts.synthetic.model_dim = options.model.model_dim;
  if (opts.windows.empty()) opts.windows.push_back(default_window(num_layers));

  std::vector<DtrConfig> grid;
  for (const auto& w : opts.windows) {
    for (double a : opts.alphas) {
      for (double b : opts.betas) {
        DtrConfig c{a, b, opts.epsilon, w.start, w.end};
        c.validate(num_layers);
        grid.push_back(c);
      }
    }
  }
  for (int l : opts.analysis_layers) {
    if (l < 0 || l >= num_layers) {
      fail(ErrorCode::kLayerWindowOutOfRange, "analysis layer out of range");
    }
  }

  const std::vector<Sample> samples = make_samples(opts.synthetic, opts.samples);
  SimulateResult result;
  result.run_dir = opts.out_dir /
                   (opts.run_id.empty() ? fmt::format("run-{}", opts.synthetic.seed)
                                        : opts.run_id);
  fs::create_directories(result.run_dir);
  if (opts.emit_traces) fs::create_directories(result.run_dir / "traces");

  result.baseline.resize(samples.size());
  result.grid.resize(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    result.grid[g].config = grid[g];
    result.grid[g].samples.resize(samples.size());
  }

  parallel_for(
      samples.size(),
      [&](std::size_t k) {
        const Sample& s = samples[k];
        const Matrix decode_emb = generate_embeddings(
            opts.decode_steps, opts.model.model_dim,
            opts.synthetic.seed + k + 0x5eed0000ULL);
        AnchorReport base = run_sample(model, s, {}, opts.decode_steps,
                                       decode_emb, opts.analysis_layers, {});
        for (std::size_t g = 0; g < grid.size(); ++g) {
          const LogitHook hook = make_dtr_hook(grid[g], s.layout, num_layers);
          result.grid[g].samples[k] =
              run_sample(model, s, hook, opts.decode_steps, decode_emb,
                         opts.analysis_layers, base.anchor);
        }
        if (opts.emit_traces) {
          const ForwardResult fwd = prefill(model, s.input, s.layout);
          write_trace_file(trace_from_forward(fwd, s.layout, Stage::prefill(),
                                              num_layers, s.id),
                           (result.run_dir / "traces" / (s.id + ".atrc")).string());
        }
        result.baseline[k] = std::move(base);
      },
      opts.workers);

  const double base_dom = mean_of(result.baseline, &AnchorReport::dominance);
  const double base_ent = mean_of(result.baseline, &AnchorReport::entropy);
  const double base_non = mean_of(result.baseline, &AnchorReport::non_anchor);
  for (GridRow& row : result.grid) {
    row.dominance = mean_of(row.samples, &AnchorReport::dominance);
    row.entropy = mean_of(row.samples, &AnchorReport::entropy);
    row.non_anchor = mean_of(row.samples, &AnchorReport::non_anchor);
    row.delta_dominance = row.dominance - base_dom;
    row.delta_entropy = row.entropy - base_ent;
    row.delta_non_anchor = row.non_anchor - base_non;
  }

  const std::string command = describe(opts);
  const auto& layer_ids = result.baseline.front().per_layer;
  std::vector<int> ids;
  for (const auto& s : layer_ids) ids.push_back(s.layer);

  {
    auto out = open_out(result.run_dir / "summary.csv");
    write_provenance(out, command, opts.synthetic.seed);
    out << "alpha,beta,layer_start,layer_end,dominance,entropy,non_anchor,"
           "delta_dominance,delta_entropy,delta_non_anchor\n";
    for (const GridRow& r : result.grid) {
      out << fmt::format("{},{},{},{},{},{},{},{},{},{}\n",
                         format_number(r.config.alpha), format_number(r.config.beta),
                         r.config.layer_start, r.config.layer_end,
                         format_number(r.dominance), format_number(r.entropy),
                         format_number(r.non_anchor), format_number(r.delta_dominance),
                         format_number(r.delta_entropy),
                         format_number(r.delta_non_anchor));
    }
  }
  {
    auto out = open_out(result.run_dir / "samples.csv");
    write_provenance(out, command, opts.synthetic.seed);
    out << "alpha,beta,layer_start,layer_end," << report_csv_header(ids) << '\n';
    for (const GridRow& r : result.grid) {
      for (const AnchorReport& rep : r.samples) {
        out << fmt::format("{},{},{},{},", format_number(r.config.alpha),
                           format_number(r.config.beta), r.config.layer_start,
                           r.config.layer_end)
            << report_csv_row(rep) << '\n';
      }
    }
  }
  {
    auto out = open_out(result.run_dir / "baseline.csv");
    write_provenance(out, command, opts.synthetic.seed);
    out << report_csv_header(ids) << '\n';
    for (const AnchorReport& rep : result.baseline) {
      out << report_csv_row(rep) << '\n';
    }
  }
  {
    nlohmann::json cfg;
    cfg["version"] = kVersion;
    cfg["command"] = command;
    cfg["model"] = {{"num_layers", opts.model.num_layers},
                    {"num_heads", opts.model.num_heads},
                    {"model_dim", opts.model.model_dim},
                    {"ffn_mult", opts.model.ffn_mult},
                    {"seed", opts.model.seed}};
    cfg["generator"] = {
        {"kind", opts.synthetic.kind == GeneratorKind::kRandom ? "random" : "anchor"},
        {"frames", opts.synthetic.num_frames},
        {"tokens_per_frame", opts.synthetic.tokens_per_frame},
        {"text_before", opts.synthetic.text_before},
        {"text_after", opts.synthetic.text_after},
        {"delta", opts.synthetic.delta},
        {"visual_offset", opts.synthetic.visual_offset},
        {"target_frame", opts.synthetic.target_frame},
        {"seed", opts.synthetic.seed}};
    cfg["samples"] = opts.samples;
    cfg["decode_steps"] = opts.decode_steps;
    cfg["epsilon"] = opts.epsilon;
    cfg["alphas"] = opts.alphas;
    cfg["betas"] = opts.betas;
    nlohmann::json windows = nlohmann::json::array();
    for (const auto& w : opts.windows) windows.push_back({w.start, w.end});
    cfg["windows"] = windows;
    cfg["calibration"] = {{"baseline_dominance", base_dom},
                          {"baseline_entropy", base_ent},
                          {"baseline_non_anchor", base_non}};
    auto out = open_out(result.run_dir / "config.json");
    out << cfg.dump(2) << '\n';
  }
  return result;
}

std::vector<fs::path> collect_traces(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> out;
  for (const fs::path& p : inputs) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(p)) {
        if (entry.is_regular_file() && entry.path().extension() == ".atrc") {
          found.push_back(entry.path());
        }
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

AnalyzeResult cmd_analyze(const AnalyzeOptions& options) {
  const std::vector<fs::path> paths = collect_traces(options.inputs);
  AnalyzeResult result;
  for (const fs::path& p : paths) {
    try {
      AttentionTrace trace = read_trace_file(p.string());
      AnchorReport report =
          analyze_logits(trace.logits, trace.layout, trace.plan);
      report.sample_id = p.stem().string();
      result.reports.push_back(std::move(report));
    } catch (const Error& e) {
      result.failures.emplace_back(p.string(), e.what());
    }
  }
  if (!result.reports.empty()) {
    try {
      result.histogram = anchor_histogram(result.reports);
    } catch (const Error& e) {
      result.failures.emplace_back("<histogram>", e.what());
    }
  } else {
    result.failures.emplace_back("<inputs>", "no readable traces");
  }

  fs::create_directories(options.out_dir);
  const std::string command =
      "analyze " + join_paths(options.inputs) + (options.lenient ? " --lenient" : "");
  {
    auto out = open_out(options.out_dir / "reports.csv");
    write_provenance(out, command, "none");
    std::size_t max_layers = 0;
    const AnchorReport* widest = nullptr;
    for (const auto& r : result.reports) {
      if (r.per_layer.size() >= max_layers) {
        max_layers = r.per_layer.size();
        widest = &r;
      }
    }
    std::vector<int> ids;
    if (widest) {
      for (const auto& s : widest->per_layer) ids.push_back(s.layer);
    }
    out << report_csv_header(ids) << '\n';
    for (const auto& r : result.reports) out << report_csv_row(r) << '\n';
  }
  {
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : result.reports) all.push_back(report_to_json(r));
    auto out = open_out(options.out_dir / "reports.json");
    out << all.dump(2) << '\n';
  }
  {
    auto out = open_out(options.out_dir / "histogram.csv");
    write_provenance(out, command, "none");
    out << "frame,frequency\n";
    for (std::size_t i = 0; i < result.histogram.size(); ++i) {
      out << i << ',' << format_number(result.histogram[i]) << '\n';
    }
  }
  {
    auto out = open_out(options.out_dir / "visual_ratio.csv");
    write_provenance(out, command, "none");
    out << "trace,layer,visual_ratio\n";
    for (const auto& r : result.reports) {
      for (const auto& s : r.per_layer) {
        out << r.sample_id << ',' << s.layer << ','
            << format_number(s.visual_ratio) << '\n';
      }
    }
  }
  {
    auto out = open_out(options.out_dir / "failures.txt");
    for (const auto& [path, err] : result.failures) {
      out << path << '\t' << err << '\n';
    }
  }
  for (const auto& [path, err] : result.failures) {
    std::cerr << "analyze: " << path << ": " << err << '\n';
  }
  const bool fatal = result.reports.empty() || result.histogram.empty();
  result.exit_code =
      (fatal || (!result.failures.empty() && !options.lenient)) ? kExitFailure
                                                                 : kExitOk;
  return result;
}

ReplayCommandResult cmd_replay(const ReplayCommandOptions& options) {
  if (options.configs.empty()) {
    fail(ErrorCode::kInvalidConfig, "no replay configuration");
  }
  const std::vector<fs::path> paths = collect_traces(options.inputs);
  std::vector<std::pair<std::string, AttentionTrace>> traces;
  ReplayCommandResult result;
  for (const fs::path& p : paths) {
    try {
      traces.emplace_back(p.stem().string(), read_trace_file(p.string()));
    } catch (const Error& e) {
      result.failures.emplace_back(p.string(), e.what());
    }
  }

  for (const auto& [name, base_config] : options.configs) {
    ReplayRow row;
    row.name = name;
    row.config = base_config;
    for (const auto& [id, trace] : traces) {
      DtrConfig config = base_config;
      if (config.layer_end < 0) {
        const LayerWindow w = default_window(trace.num_layers);
        config.layer_start = w.start;
        config.layer_end = w.end;
      }
      try {
        dtr::ReplayResult r = replay_dtr(trace, config);
        r.before.sample_id = id;
        r.after.sample_id = id;
        row.traces.emplace_back(std::move(r.before), std::move(r.after));
      } catch (const Error& e) {
        if (is_config_error(e.code())) throw;
        result.failures.emplace_back(id + " [" + name + "]", e.what());
      }
    }
    if (!row.traces.empty()) {
      const double n = static_cast<double>(row.traces.size());
      for (const auto& [b, a] : row.traces) {
        row.before_dominance += b.dominance / n;
        row.after_dominance += a.dominance / n;
        row.before_entropy += b.entropy / n;
        row.after_entropy += a.entropy / n;
        row.before_non_anchor += b.non_anchor / n;
        row.after_non_anchor += a.non_anchor / n;
      }
    }
    result.rows.push_back(std::move(row));
  }

  fs::create_directories(options.out_dir);
  std::string command = "replay " + join_paths(options.inputs);
  for (const auto& [name, c] : options.configs) {
    command += fmt::format(" --config-entry {}={},{},{}:{},{}", name,
                           format_number(c.alpha), format_number(c.beta),
                           c.layer_start, c.layer_end, format_number(c.epsilon));
  }
  {
    auto out = open_out(options.out_dir / "replay.csv");
    write_provenance(out, command, "none");
    out << "# label: non-propagated\n";
    out << "config,alpha,beta,trace,before_anchor,after_anchor,before_dominance,"
           "after_dominance,before_entropy,after_entropy,before_non_anchor,"
           "after_non_anchor\n";
    for (const ReplayRow& row : result.rows) {
      for (const auto& [b, a] : row.traces) {
        out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", row.name,
                           format_number(row.config.alpha),
                           format_number(row.config.beta), b.sample_id, b.anchor,
                           a.anchor, format_number(b.dominance),
                           format_number(a.dominance), format_number(b.entropy),
                           format_number(a.entropy), format_number(b.non_anchor),
                           format_number(a.non_anchor));
      }
    }
  }
  {
    auto out = open_out(options.out_dir / "summary.csv");
    write_provenance(out, command, "none");
    out << "# label: non-propagated\n";
    out << "config,alpha,beta,traces,dominance,entropy,non_anchor,"
           "delta_dominance,delta_entropy,delta_non_anchor\n";
    for (const ReplayRow& row : result.rows) {
      out << fmt::format(
          "{},{},{},{},{},{},{},{},{},{}\n", row.name,
          format_number(row.config.alpha), format_number(row.config.beta),
          row.traces.size(), format_number(row.after_dominance),
          format_number(row.after_entropy), format_number(row.after_non_anchor),
          format_number(row.after_dominance - row.before_dominance),
          format_number(row.after_entropy - row.before_entropy),
          format_number(row.after_non_anchor - row.before_non_anchor));
    }
  }
  for (const auto& [path, err] : result.failures) {
    std::cerr << "replay: " << path << ": " << err << '\n';
  }
  const bool fatal = traces.empty();
  result.exit_code =
      (fatal || (!result.failures.empty() && !options.lenient)) ? kExitFailure
                                                                 : kExitOk;
  return result;
}

int cmd_mask_study(const MaskStudyOptions& options) {
  const Model model(options.model);
  SyntheticSpec spec = options.synthetic;
  spec.model_dim = options.model.model_dim;
  const std::vector<Sample> samples = make_samples(spec, options.samples);
  const std::vector<std::size_t> anchors = compute_anchors(model, samples);
  StudyOptions study_options;
  study_options.layer_start = options.window.start;
  study_options.layer_end = options.window.end;
  study_options.seed = spec.seed;
  study_options.fixed_frame = options.fixed_frame;
  study_options.workers = options.workers;
  const MaskingStudy study =
      run_masking_study(model, samples, anchors, study_options);
  fs::create_directories(options.out_dir);
  auto out = open_out(options.out_dir / "study.csv");
  write_provenance(out,
                   describe_study("mask-study", options.model, spec, options.samples) +
                       fmt::format(" --layers {}:{} --fixed-frame {}",
                                   options.window.start, options.window.end,
                                   options.fixed_frame),
                   spec.seed);
  write_study_csv(out, study);
  return kExitOk;
}

int cmd_black_frame(const BlackFrameOptions& options) {
  const Model model(options.model);
  SyntheticSpec spec = options.synthetic;
  spec.model_dim = options.model.model_dim;
  const std::vector<Sample> samples = make_samples(spec, options.samples);
  const BlackFrameStudy study =
      run_black_frame_study(model, samples, {}, options.workers);
  fs::create_directories(options.out_dir);
  auto out = open_out(options.out_dir / "anchors.csv");
  write_provenance(out,
                   describe_study("black-frame", options.model, spec, options.samples),
                   spec.seed);
  out << "# anchor_retained: " << format_number(study.anchor_retained) << '\n';
  out << "frame,normal,black_frame\n";
  for (std::size_t i = 0; i < study.histogram_before.size(); ++i) {
    out << i << ',' << format_number(study.histogram_before[i]) << ','
        << format_number(study.histogram_after[i]) << '\n';
  }
  return kExitOk;
}

}  // namespace dtr::harness
