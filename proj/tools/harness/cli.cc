// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <iostream>

#include "dtr/error.h"
#include "dtr/parallel.h"
#include "harness.h"

namespace dtr::harness {
namespace {

struct SyntheticFlags {
  ModelConfig model;
  SyntheticSpec synthetic;
  std::size_t samples = 10;
  std::string generator = "anchor";
};

void add_synthetic_flags(CLI::App* cmd, SyntheticFlags& f) {
  cmd->add_option("--num-layers", f.model.num_layers, "Decoder layers")
      ->capture_default_str();
  cmd->add_option("--heads", f.model.num_heads, "Attention heads")
      ->capture_default_str();
  cmd->add_option("--dim", f.model.model_dim, "Model width")
      ->capture_default_str();
  cmd->add_option("--model-seed", f.model.seed, "Weight seed")
      ->capture_default_str();
  cmd->add_option("--frames", f.synthetic.num_frames, "Frames per sample")
      ->capture_default_str();
  cmd->add_option("--tokens-per-frame", f.synthetic.tokens_per_frame,
                  "Visual tokens per frame")
      ->capture_default_str();
  cmd->add_option("--text-before", f.synthetic.text_before,
                  "Text tokens before the visual block")
      ->capture_default_str();
  cmd->add_option("--text-after", f.synthetic.text_after,
                  "Text tokens after the visual block")
      ->capture_default_str();
  cmd->add_option("--generator", f.generator, "anchor | random")
      ->check(CLI::IsMember({"anchor", "random"}))
      ->capture_default_str();
  cmd->add_option("--delta", f.synthetic.delta,
                  "Logit boost of the target frame (anchor generator)")
      ->capture_default_str();
  cmd->add_option("--visual-offset", f.synthetic.visual_offset,
                  "Logit offset of every visual key (anchor generator)")
      ->capture_default_str();
  cmd->add_option("--target-frame", f.synthetic.target_frame,
                  "Boosted frame (anchor generator)")
      ->capture_default_str();
  cmd->add_option("--seed", f.synthetic.seed, "Sample seed")
      ->capture_default_str();
  cmd->add_option("--samples", f.samples, "Number of samples")
      ->capture_default_str();
}

void finish_synthetic(SyntheticFlags& f) {
  f.synthetic.kind = f.generator == "random" ? GeneratorKind::kRandom
                                             : GeneratorKind::kAnchorDominant;
  f.synthetic.model_dim = f.model.model_dim;
}

std::vector<double> range_grid(double lo, double hi, double step) {
  std::vector<double> out;
  for (int i = 0; lo + i * step <= hi + 1e-12; ++i) out.push_back(lo + i * step);
  return out;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Decoder-side temporal rebalancing lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  // simulate
  SyntheticFlags sim_flags;
  std::vector<double> sim_alphas, sim_betas;
  std::vector<std::string> sim_layers;
  std::vector<std::string> sim_analysis;
  std::string sim_preset, sim_sweep, sim_config;
  SimulateOptions sim;
  auto* simulate = app.add_subcommand(
      "simulate", "Synthetic experiments and alpha/beta/layer sweeps");
  add_synthetic_flags(simulate, sim_flags);
  simulate->add_option("--alpha", sim_alphas, "Alpha grid (comma separated)")
      ->delimiter(',');
  simulate->add_option("--beta", sim_betas, "Beta grid (comma separated)")
      ->delimiter(',');
  simulate->add_option("--layers", sim_layers, "Layer windows A:B (comma separated)")
      ->delimiter(',');
  simulate->add_option("--epsilon", sim.epsilon, "Gap normalization epsilon")
      ->capture_default_str();
  simulate->add_option("--preset", sim_preset, "One of baseline | global | comp | dtr");
  simulate->add_option("--sweep", sim_sweep,
                       "alpha | beta | layers: ablation grid at the defaults")
      ->check(CLI::IsMember({"alpha", "beta", "layers"}));
  simulate->add_option("--config", sim_config, "key = value DTR config file");
  simulate->add_option("--decode-steps", sim.decode_steps,
                       "Single-row decode steps after prefill")
      ->capture_default_str();
  simulate->add_option("--analyze-layers", sim_analysis,
                       "Layers for statistics A:B (default: all)")
      ->delimiter(',');
  simulate->add_option("--out", sim.out_dir, "Output directory")
      ->capture_default_str();
  simulate->add_option("--run-id", sim.run_id, "Run directory name");
  simulate->add_flag("--emit-traces", sim.emit_traces,
                     "Write baseline .atrc traces per sample");

  // analyze
  AnalyzeOptions an;
  std::vector<std::string> an_inputs;
  auto* analyze = app.add_subcommand("analyze", "Anchor statistics over traces");
  analyze->add_option("traces", an_inputs, "Trace files or directories")
      ->required();
  analyze->add_option("--out", an.out_dir, "Output directory")
      ->capture_default_str();
  analyze->add_flag("--lenient", an.lenient, "Exit 0 despite unreadable traces");

  // replay
  ReplayCommandOptions rp;
  std::vector<std::string> rp_inputs, rp_presets;
  std::optional<double> rp_alpha, rp_beta;
  double rp_epsilon = 1e-6;
  std::string rp_layers, rp_config;
  auto* replay =
      app.add_subcommand("replay", "Non-propagated DTR counterfactual on traces");
  replay->add_option("traces", rp_inputs, "Trace files or directories")
      ->required();
  replay->add_option("--alpha", rp_alpha, "Shared adjustment");
  replay->add_option("--beta", rp_beta, "Deficit compensation");
  replay->add_option("--epsilon", rp_epsilon, "Gap normalization epsilon")
      ->capture_default_str();
  replay->add_option("--layers", rp_layers,
                     "Window A:B (default: round(18L/32):L-1 for L layers)");
  replay->add_option("--preset", rp_presets,
                     "baseline | global | comp | dtr | all (comma separated)")
      ->delimiter(',');
  replay->add_option("--config", rp_config, "key = value DTR config file");
  replay->add_option("--out", rp.out_dir, "Output directory")
      ->capture_default_str();
  replay->add_flag("--lenient", rp.lenient, "Exit 0 despite unreadable traces");

  // mask-study
  SyntheticFlags ms_flags;
  MaskStudyOptions ms;
  std::string ms_layers = "1:-1";
  auto* mask = app.add_subcommand(
      "mask-study", "Normal / mask-anchor / mask-random / mask-fixed comparison");
  add_synthetic_flags(mask, ms_flags);
  mask->add_option("--layers", ms_layers, "Masked layers A:B (-1 = last)")
      ->capture_default_str();
  mask->add_option("--fixed-frame", ms.fixed_frame,
                   "0-indexed frame for the fixed non-anchor condition")
      ->capture_default_str();
  mask->add_option("--out", ms.out_dir)->capture_default_str();

  // black-frame
  SyntheticFlags bf_flags;
  BlackFrameOptions bf;
  auto* black = app.add_subcommand(
      "black-frame", "Anchor positions before/after blanking the anchor frame");
  add_synthetic_flags(black, bf_flags);
  black->add_option("--out", bf.out_dir)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const std::size_t workers = default_worker_count();
  try {
    if (*simulate) {
      finish_synthetic(sim_flags);
      sim.model = sim_flags.model;
      sim.synthetic = sim_flags.synthetic;
      sim.samples = sim_flags.samples;
      sim.workers = workers;
      DtrConfig base{0.5, 0.4, sim.epsilon, 0, -1};
      if (!sim_config.empty()) base = load_dtr_config(sim_config, base);
      if (!sim_preset.empty()) {
        const NamedPreset p = find_preset(sim_preset);
        base.alpha = p.alpha;
        base.beta = p.beta;
      }
      sim.epsilon = base.epsilon;
      sim.alphas = sim_alphas.empty() ? std::vector<double>{base.alpha} : sim_alphas;
      sim.betas = sim_betas.empty() ? std::vector<double>{base.beta} : sim_betas;
      for (const auto& w : sim_layers) sim.windows.push_back(parse_window(w));
      if (sim.windows.empty() && base.layer_end >= 0) {
        sim.windows.push_back({base.layer_start, base.layer_end});
      }
      const int L = sim.model.num_layers;
      if (sim_sweep == "alpha") {
        sim.alphas = range_grid(0.0, 0.7, 0.1);
        sim.betas = {0.4};
      } else if (sim_sweep == "beta") {
        sim.alphas = {0.5};
        sim.betas = range_grid(0.0, 0.7, 0.1);
      } else if (sim_sweep == "layers") {
        sim.alphas = {0.5};
        sim.betas = {0.4};
        sim.windows.clear();
        for (int s = 0; s < L; ++s) sim.windows.push_back({s, L - 1});
        if (L > 1) sim.windows.push_back({0, L / 2 - 1 < 0 ? 0 : L / 2 - 1});
      }
      for (const auto& w : sim_analysis) {
        const LayerWindow aw = parse_window(w);
        for (int l = aw.start; l <= aw.end; ++l) sim.analysis_layers.push_back(l);
      }
      const SimulateResult r = cmd_simulate(sim);
      std::cout << "wrote " << r.grid.size() << " grid rows and "
                << r.grid.size() * sim.samples << " sample rows to "
                << r.run_dir.string() << '\n';
      return kExitOk;
    }
    if (*analyze) {
      for (const auto& p : an_inputs) an.inputs.emplace_back(p);
      const AnalyzeResult r = cmd_analyze(an);
      std::cout << "analyzed " << r.reports.size() << " traces, "
                << r.failures.size() << " failures -> " << an.out_dir.string()
                << '\n';
      return r.exit_code;
    }
    if (*replay) {
      for (const auto& p : rp_inputs) rp.inputs.emplace_back(p);
      DtrConfig base{0.5, 0.4, rp_epsilon, 0, -1};
      if (!rp_config.empty()) base = load_dtr_config(rp_config, base);
      if (!rp_layers.empty()) {
        const LayerWindow w = parse_window(rp_layers);
        base.layer_start = w.start;
        base.layer_end = w.end;
      }
      std::vector<std::string> names;
      for (const auto& p : rp_presets) {
        if (p == "all") {
          for (const auto& q : presets()) names.push_back(q.name);
        } else {
          names.push_back(p);
        }
      }
      for (const auto& n : names) {
        const NamedPreset p = find_preset(n);
        DtrConfig c = base;
        c.alpha = p.alpha;
        c.beta = p.beta;
        rp.configs.emplace_back(p.name, c);
      }
      if (names.empty() || rp_alpha || rp_beta) {
        DtrConfig c = base;
        if (rp_alpha) c.alpha = *rp_alpha;
        if (rp_beta) c.beta = *rp_beta;
        rp.configs.emplace_back("custom", c);
      }
      const ReplayCommandResult r = cmd_replay(rp);
      std::cout << "replayed " << r.rows.size() << " configurations, "
                << r.failures.size() << " failures -> " << rp.out_dir.string()
                << '\n';
      return r.exit_code;
    }
    if (*mask) {
      finish_synthetic(ms_flags);
      ms.model = ms_flags.model;
      ms.synthetic = ms_flags.synthetic;
      ms.samples = ms_flags.samples;
      ms.workers = workers;
      const LayerWindow w = parse_window(ms_layers);
      ms.window = w;
      return cmd_mask_study(ms);
    }
    if (*black) {
      finish_synthetic(bf_flags);
      bf.model = bf_flags.model;
      bf.synthetic = bf_flags.synthetic;
      bf.samples = bf_flags.samples;
      bf.workers = workers;
      return cmd_black_frame(bf);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.code()) {
      case ErrorCode::kInvalidConfig:
      case ErrorCode::kLayerWindowOutOfRange:
      case ErrorCode::kInvalidDim:
      case ErrorCode::kFrameOutOfRange:
      case ErrorCode::kInvalidLayout:
        return kExitUsage;
      default:
        return kExitFailure;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace dtr::harness
