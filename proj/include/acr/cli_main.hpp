#pragma once

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "acr/cli.hpp"

namespace acr {

namespace detail {

inline void add_hyper_flags(CLI::App* cmd, Hyperparams& hp) {
  cmd->add_option("--learning-rate", hp.learning_rate, "SGD learning rate");
  cmd->add_option("--epochs", hp.epochs, "maximum training epochs");
  cmd->add_option("--batch-size", hp.batch_size, "minibatch size");
  cmd->add_option("--mc-samples", hp.mc_samples, "weight draws per training step");
  cmd->add_option("--prior-std", hp.prior_std, "prior std dev of weights");
  cmd->add_option("--kl-anneal-epochs", hp.kl_anneal_epochs,
                  "epochs over which the KL weight ramps to 1");
  cmd->add_option("--patience", hp.patience, "early-stop patience (epochs)");
  cmd->add_option("--hidden", hp.hidden, "hidden layer widths");
}

}  // namespace detail

/// Command-line entry point. Returns 0 on success, 1 on partial failure
/// (some sweep cells failed), 2 on usage or configuration errors.
inline int run_cli(int argc, const char* const* argv,
                   std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"acr: lane-based arrival curve reconstruction from LPR data"};
  app.require_subcommand(1);

  SimulateOptions sim_opt;
  auto* sim = app.add_subcommand("simulate",
                                 "generate a synthetic corridor and its LPR records");
  sim->add_option("--config", sim_opt.config_path,
                  "corridor config file (key=value); omit for the built-in corridor");
  sim->add_option("--out", sim_opt.out_dir, "output directory");
  double sim_duration = -1.0;
  sim->add_option("--duration", sim_duration, "override duration (seconds)");
  std::uint64_t sim_seed = 0;
  auto* sim_seed_opt =
      sim->add_option("--seed", sim_seed, "root seed")->envname("ACR_SEED");
  sim->add_option("--matching-rate", sim_opt.matching_rate,
                  "degrade plate matching to this rate (0, 1]");
  sim->add_flag("--dump-config", sim_opt.dump_config,
                "print the effective config and exit");

  TrainOptions train_opt;
  auto* tr = app.add_subcommand("train", "train per-lane arrival models");
  tr->add_option("--config", train_opt.config_path, "corridor config file");
  tr->add_option("--upstream", train_opt.upstream_csv, "upstream LPR CSV")
      ->required();
  tr->add_option("--downstream", train_opt.downstream_csv, "downstream LPR CSV")
      ->required();
  tr->add_option("--ground-truth", train_opt.ground_truth_csv,
                 "ground-truth CSV (enables sub-gap augmentation)");
  tr->add_option("--out", train_opt.out_dir, "model output directory");
  tr->add_option("--seed", train_opt.seed, "root seed")->envname("ACR_SEED");
  tr->add_option("--mode", train_opt.mode, "bayesian | deterministic");
  tr->add_option("--features", train_opt.feature_mode,
                 "per_lane | aggregate | no_link");
  tr->add_option("--augmentation", train_opt.augmentation_k,
                 "interior samples per gap (needs ground truth)");
  tr->add_flag("--dump-samples", train_opt.dump_samples,
               "also write the training samples CSV");
  detail::add_hyper_flags(tr, train_opt.hyper);

  ReconstructOptions rec_opt;
  auto* rec = app.add_subcommand("reconstruct", "reconstruct lane arrival curves");
  rec->add_option("--config", rec_opt.config_path, "corridor config file");
  rec->add_option("--upstream", rec_opt.upstream_csv, "upstream LPR CSV")
      ->required();
  rec->add_option("--downstream", rec_opt.downstream_csv, "downstream LPR CSV")
      ->required();
  rec->add_option("--models", rec_opt.models_dir, "directory with model_*.json")
      ->required();
  rec->add_option("--out", rec_opt.out_csv, "output CSV path");
  rec->add_option("--mode", rec_opt.mode, "historical | realtime");
  rec->add_option("--grid-step", rec_opt.grid_step, "historical grid step (s)");
  rec->add_option("--cadence", rec_opt.cadence, "realtime query cadence (s)");
  rec->add_option("--samples", rec_opt.m_samples, "posterior draws per estimate");
  rec->add_option("--seed", rec_opt.seed, "root seed")->envname("ACR_SEED");
  rec->add_option("--svg", rec_opt.svg_dir, "emit per-lane SVG band plots here");
  rec->add_option("--counts", rec_opt.counts_csv,
                  "also write realtime vehicle counts to this CSV");

  EvaluateOptions eval_opt;
  auto* ev = app.add_subcommand(
      "evaluate", "matching-rate sweep with per-cell train/reconstruct/score");
  ev->add_option("--config", eval_opt.config_path, "corridor config file");
  ev->add_option("--out", eval_opt.out_csv, "report CSV path");
  ev->add_option("--rates", eval_opt.rates, "matching rates to sweep");
  ev->add_option("--seeds", eval_opt.seeds, "repetitions per rate");
  ev->add_option("--seed", eval_opt.seed, "root seed")->envname("ACR_SEED");
  ev->add_option("--jobs", eval_opt.jobs, "parallel cells (0 = hardware)");
  ev->add_option("--modes", eval_opt.modes,
                 "model modes: bacl, lcnn, bacl_nolink, bacl_agg");
  ev->add_option("--train-duration", eval_opt.cell.train_duration,
                 "training corridor length (s)");
  ev->add_option("--eval-duration", eval_opt.cell.eval_duration,
                 "evaluation corridor length (s)");
  ev->add_option("--grid-step", eval_opt.cell.grid_step, "evaluation grid step (s)");
  ev->add_option("--samples", eval_opt.cell.prediction_samples,
                 "posterior draws per estimate");
  detail::add_hyper_flags(ev, eval_opt.cell.hyper);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim) {
      if (sim_duration >= 0.0) sim_opt.duration = sim_duration;
      if (sim_seed_opt->count() > 0) sim_opt.seed = sim_seed;
      return cmd_simulate(sim_opt, out);
    }
    if (*tr) return cmd_train(train_opt, out);
    if (*rec) return cmd_reconstruct(rec_opt, out);
    if (*ev) return cmd_evaluate(eval_opt, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

inline int run_cli(const std::vector<std::string>& args,
                   std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv;
  argv.push_back("acr");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace acr
