// Command-line front end for the detection + subtyping pipeline. Every
// subcommand is a thin shell around one pipeline stage: it loads the
// experiment config, applies --seed/--out overrides and dispatches.
//
// Exit codes: 0 success, 2 configuration error, 3 missing or stale
// upstream artifact, 1 anything else.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "rcc/config.hpp"
#include "rcc/errors.hpp"
#include "rcc/log.hpp"
#include "rcc/pipeline.hpp"
#include "rcc/version.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Experiment config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "Override the experiment seed");
  cmd->add_option("--out", args.out_dir, "Override the output directory");
  cmd->add_flag("--force", args.force, "Overwrite existing stage output");
}

rcc::config::ExperimentConfig load(const CommonArgs& args) {
  auto cfg = rcc::config::load_experiment_config(args.config_path);
  rcc::config::ConfigOverrides overrides;
  overrides.seed = args.seed;
  if (args.out_dir) overrides.out_dir = *args.out_dir;
  rcc::config::apply_overrides(cfg, overrides);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Renal cancer-region detection and subtyping pipeline"};
  app.set_version_flag("--version", std::string(rcc::kVersion));
  app.require_subcommand(1);

  CommonArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Render the synthetic slide set");
  add_common(synth, synth_args);

  CommonArgs patch_args;
  auto* patch = app.add_subcommand("patch", "Extract patch manifests from slides");
  add_common(patch, patch_args);

  CommonArgs td_args;
  std::string td_mode = "ssl";
  std::string td_subtype;
  auto* td = app.add_subcommand("train-detector", "Train a cancer-region detector");
  add_common(td, td_args);
  td->add_option("--mode", td_mode,
                 "labeled_only | fully_supervised | ssl | ssl_finetune");
  td->add_option("--subtype", td_subtype, "Restrict to slides of one diagnosis");

  CommonArgs ft_args;
  std::string ft_subtype;
  auto* ft = app.add_subcommand("finetune", "Continue SSL training on the extension set");
  add_common(ft, ft_args);
  ft->add_option("--subtype", ft_subtype, "Restrict to slides of one diagnosis");

  CommonArgs hm_args;
  std::string hm_slide;
  std::string hm_checkpoint;
  auto* hm = app.add_subcommand("hitmap", "Cancer-probability grid and overlay per slide");
  add_common(hm, hm_args);
  hm->add_option("--slide", hm_slide, "Slide id (default: all validation/test slides)");
  hm->add_option("--checkpoint", hm_checkpoint,
                 "Checkpoint directory relative to the experiment root");

  CommonArgs gl_args;
  auto* gl = app.add_subcommand("gen-labels", "Detector-generated subtype labels");
  add_common(gl, gl_args);

  CommonArgs ts_args;
  std::string ts_mode;
  auto* ts = app.add_subcommand("train-subtyper", "Train the subtype classifier");
  add_common(ts, ts_args);
  ts->add_option("--mode", ts_mode, "ce_3class | ce_4class | hybrid_4class");

  CommonArgs ps_args;
  std::string ps_mode;
  auto* ps = app.add_subcommand("predict-slides", "Per-slide verdicts on the test set");
  add_common(ps, ps_args);
  ps->add_option("--mode", ps_mode, "Subtyper mode whose checkpoint to use");

  CommonArgs ev_args;
  std::string ev_mode;
  auto* ev = app.add_subcommand("evaluate", "Slide- and patch-level metrics");
  add_common(ev, ev_args);
  ev->add_option("--mode", ev_mode, "Subtyper mode whose predictions to score");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      auto cfg = load(synth_args);
      rcc::pipeline::run_synth(cfg, synth_args.force);
    } else if (*patch) {
      auto cfg = load(patch_args);
      rcc::pipeline::run_patch(cfg, patch_args.force);
    } else if (*td) {
      auto cfg = load(td_args);
      rcc::pipeline::run_train_detector(cfg, td_mode, td_subtype, td_args.force);
    } else if (*ft) {
      auto cfg = load(ft_args);
      rcc::pipeline::run_finetune(cfg, ft_subtype, ft_args.force);
    } else if (*hm) {
      auto cfg = load(hm_args);
      rcc::pipeline::run_hitmap(cfg, hm_slide, hm_checkpoint, hm_args.force);
    } else if (*gl) {
      auto cfg = load(gl_args);
      rcc::pipeline::run_gen_labels(cfg, gl_args.force);
    } else if (*ts) {
      auto cfg = load(ts_args);
      if (ts_mode.empty()) ts_mode = rcc::subtyping::to_string(cfg.subtype.mode);
      rcc::pipeline::run_train_subtyper(cfg, ts_mode, ts_args.force);
    } else if (*ps) {
      auto cfg = load(ps_args);
      if (ps_mode.empty()) ps_mode = rcc::subtyping::to_string(cfg.subtype.mode);
      rcc::pipeline::run_predict_slides(cfg, ps_mode, ps_args.force);
    } else if (*ev) {
      auto cfg = load(ev_args);
      if (ev_mode.empty()) ev_mode = rcc::subtyping::to_string(cfg.subtype.mode);
      rcc::pipeline::run_evaluate(cfg, ev_mode, ev_args.force);
    }
  } catch (const rcc::ConfigError& e) {
    rcc::log::error(e.what());
    return 2;
  } catch (const rcc::ValidationError& e) {
    rcc::log::error(e.what());
    return 2;
  } catch (const rcc::MissingArtifactError& e) {
    rcc::log::error(e.what());
    return 3;
  } catch (const std::exception& e) {
    rcc::log::error(e.what());
    return 1;
  }
  return 0;
}
