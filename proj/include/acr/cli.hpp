#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "acr/config.hpp"
#include "acr/metrics.hpp"
#include "acr/pipeline.hpp"
#include "acr/svg.hpp"

namespace acr {

constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitUsage = 2;

inline std::string sanitize_lane(const std::string& lane) {
  std::string out = lane;
  for (char& c : out)
    if (c == ':' || c == '/') c = '_';
  return out;
}

inline SimConfig load_corridor_config(const std::string& path) {
  if (path.empty()) return default_corridor();
  return sim_config_from_kv(parse_kv_file(path));
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::string config_path;
  std::string out_dir = "sim_out";
  std::optional<double> duration;
  std::optional<std::uint64_t> seed;
  double matching_rate = 1.0;
  bool dump_config = false;
};

inline int cmd_simulate(const SimulateOptions& opt, std::ostream& log = std::cout) {
  SimConfig config = load_corridor_config(opt.config_path);
  if (opt.duration) config.duration = *opt.duration;
  if (opt.seed) config.seed = *opt.seed;
  if (opt.dump_config) {
    log << sim_config_to_text(config);
    return kExitOk;
  }
  if (opt.matching_rate <= 0.0 || opt.matching_rate > 1.0)
    throw std::invalid_argument("matching rate must be in (0, 1]");

  SimOutput sim = simulate(config);
  if (opt.matching_rate < 1.0) {
    Rng rng = Rng::stream(config.seed, "degrade");
    degrade_to_matching_rate(sim.upstream, sim.downstream, opt.matching_rate, rng);
  }
  std::filesystem::create_directories(opt.out_dir);
  auto path = [&](const char* name) {
    return (std::filesystem::path(opt.out_dir) / name).string();
  };
  write_lpr_csv(path("upstream.csv"), sim.upstream);
  write_lpr_csv(path("downstream.csv"), sim.downstream);
  write_ground_truth_csv(path("ground_truth.csv"), sim.truth);

  log << "simulated vehicles: " << sim.truth.vehicles.size()
      << " (merges: " << sim.truth.merge_count() << ")\n";
  log << "upstream records:   " << sim.upstream.size() << "\n";
  log << "downstream records: " << sim.downstream.size() << "\n";
  log << "wrote " << path("upstream.csv") << ", " << path("downstream.csv") << ", "
      << path("ground_truth.csv") << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string config_path;
  std::string upstream_csv;
  std::string downstream_csv;
  std::string ground_truth_csv;  // optional; enables sub-gap augmentation
  std::string out_dir = "models";
  std::uint64_t seed = 1;
  std::string mode = "bayesian";
  std::string feature_mode = "per_lane";
  int augmentation_k = 3;
  Hyperparams hyper;
  bool dump_samples = false;
};

inline int cmd_train(const TrainOptions& opt, std::ostream& log = std::cout) {
  SimConfig config = load_corridor_config(opt.config_path);
  auto upstream = read_lpr_csv(opt.upstream_csv);
  auto downstream = read_lpr_csv(opt.downstream_csv);
  auto upstream_curves = build_lane_curves(upstream);
  auto downstream_curves = build_lane_curves(downstream);
  MatchDiagnostics diag;
  auto pairs = match_plates(upstream, downstream, downstream_curves, &diag);
  auto lane_pairs = pairs_by_lane(pairs);

  std::optional<GroundTruth> truth;
  if (!opt.ground_truth_csv.empty())
    truth = read_ground_truth_csv(opt.ground_truth_csv, config.layout);

  BaclMode mode = bacl_mode_from_string(opt.mode);
  FeatureMode feature_mode = feature_mode_from_string(opt.feature_mode);

  std::filesystem::create_directories(opt.out_dir);
  auto trace_path = (std::filesystem::path(opt.out_dir) / "loss_trace.csv").string();
  auto trace_out = open_output(trace_path);
  trace_out << "lane,epoch,train_loss,val_nll\n";

  std::vector<TrainingSample> all_samples;
  int trained = 0;
  for (const auto& lane : config.layout.downstream_lanes) {
    auto it = lane_pairs.find(lane);
    const CumulativeCurve* lane_truth = nullptr;
    if (truth) {
      auto t = truth->true_arrivals.find(lane);
      if (t != truth->true_arrivals.end()) lane_truth = &t->second;
    }
    std::string warning;
    std::vector<TrainingSample> samples;
    if (it != lane_pairs.end())
      samples = extract_training_samples(it->second, upstream_curves, config.layout,
                                         config.upstream_signal, opt.augmentation_k,
                                         lane_truth, &warning);
    if (samples.empty()) {
      log << "warning: lane " << lane << " skipped ("
          << (warning.empty() ? "no samples" : warning) << ")\n";
      continue;
    }
    all_samples.insert(all_samples.end(), samples.begin(), samples.end());
    BaclModel model;
    model.lane = lane;
    model.mode = mode;
    model.feature_mode = feature_mode;
    TrainResult tr = train(model, samples, opt.hyper,
                           stream_seed(opt.seed, "train.lane", hash_name(lane)));
    for (std::size_t e = 0; e < tr.loss_trace.size(); ++e) {
      trace_out << lane << ',' << e << ',' << format_general(tr.loss_trace[e]) << ',';
      if (e < tr.val_trace.size() && std::isfinite(tr.val_trace[e]))
        trace_out << format_general(tr.val_trace[e]);
      trace_out << '\n';
    }
    auto model_path =
        (std::filesystem::path(opt.out_dir) / ("model_" + sanitize_lane(lane) + ".json"))
            .string();
    save_model(model_path, model);
    log << "lane " << lane << ": " << samples.size() << " samples, "
        << tr.epochs_run << " epochs"
        << (tr.stopped_early ? " (early stop)" : "") << " -> " << model_path << "\n";
    ++trained;
  }
  if (opt.dump_samples)
    write_samples_csv((std::filesystem::path(opt.out_dir) / "samples.csv").string(),
                      all_samples, config.layout);
  log << "trained " << trained << " lane model(s); matched pairs: " << pairs.size()
      << " (rejected out-of-order: " << diag.rejected_out_of_order << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// reconstruct

struct ReconstructOptions {
  std::string config_path;
  std::string upstream_csv;
  std::string downstream_csv;
  std::string models_dir;
  std::string out_csv = "reconstruction.csv";
  std::string mode = "historical";  // or "realtime"
  double grid_step = 1.0;
  double cadence = 5.0;
  int m_samples = 100;
  std::uint64_t seed = 1;
  std::string svg_dir;     // per-lane band plots when set
  std::string counts_csv;  // realtime vehicle counts when set
};

inline std::map<std::string, BaclModel> load_lane_models(const std::string& dir) {
  std::map<std::string, BaclModel> models;
  if (!std::filesystem::is_directory(dir))
    throw std::invalid_argument("model directory not found: " + dir);
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto name = entry.path().filename().string();
    if (name.rfind("model_", 0) == 0 && entry.path().extension() == ".json") {
      BaclModel m = load_model(entry.path().string());
      models[m.lane] = std::move(m);
    }
  }
  if (models.empty())
    throw std::invalid_argument("no model artifacts (model_*.json) in " + dir);
  return models;
}

inline void write_reconstruction_rows(std::ofstream& out,
                                      const ReconstructedCurve& curve) {
  for (const auto& p : curve.points) {
    out << curve.lane << ',' << format_fixed(p.t, 3) << ','
        << format_general(p.mean) << ',' << format_general(p.var_total()) << ','
        << format_general(p.var_epistemic) << ',' << format_general(p.var_aleatoric)
        << ',' << to_string(curve.mode) << '\n';
  }
}

inline void write_band_svg(const std::string& path, const ReconstructedCurve& curve,
                           double z) {
  SvgSeries mean_series;
  mean_series.label = curve.lane + " mean";
  mean_series.color = "#2e7d32";
  for (const auto& p : curve.points) {
    mean_series.t.push_back(p.t);
    mean_series.value.push_back(p.mean);
    mean_series.band_halfwidth.push_back(z * std::sqrt(p.var_total()));
  }
  auto out = open_output(path);
  out << render_svg_chart("arrival curve reconstruction (" + curve.lane + ")",
                          {mean_series});
}

inline int cmd_reconstruct(const ReconstructOptions& opt,
                           std::ostream& log = std::cout) {
  SimConfig config = load_corridor_config(opt.config_path);
  auto upstream = read_lpr_csv(opt.upstream_csv);
  auto downstream = read_lpr_csv(opt.downstream_csv);
  auto upstream_curves = build_lane_curves(upstream);
  auto downstream_curves = build_lane_curves(downstream);
  auto pairs = match_plates(upstream, downstream, downstream_curves);
  auto lane_pairs = pairs_by_lane(pairs);
  auto models = load_lane_models(opt.models_dir);

  if (!opt.svg_dir.empty()) std::filesystem::create_directories(opt.svg_dir);
  auto out = open_output(opt.out_csv);
  out << "lane,t,mean,var_total,var_epistemic,var_aleatoric,mode\n";
  std::optional<std::ofstream> counts;
  if (!opt.counts_csv.empty()) {
    counts.emplace(open_output(opt.counts_csv));
    *counts << "lane,t,mean,variance\n";
  }
  const double z90 = normal_quantile(0.95);

  int lanes_done = 0;
  for (const auto& [lane, model] : models) {
    auto it = lane_pairs.find(lane);
    if (it == lane_pairs.end() || it->second.empty()) {
      log << "warning: lane " << lane << " has no matched vehicles; skipped\n";
      continue;
    }
    ReconstructedCurve curve;
    if (opt.mode == "historical") {
      if (it->second.size() < 2) {
        log << "warning: lane " << lane << " has fewer than 2 anchors; skipped\n";
        continue;
      }
      curve = historical_acr(lane, it->second, upstream_curves, model, config.layout,
                             config.upstream_signal, opt.grid_step,
                             stream_seed(opt.seed, "reconstruct"), opt.m_samples);
    } else if (opt.mode == "realtime") {
      double t_start = it->second.front().t_downstream;
      double t_end = 0.0;
      for (const auto& r : downstream) t_end = std::max(t_end, r.timestamp);
      for (const auto& r : upstream) t_end = std::max(t_end, r.timestamp);
      auto replay = replay_realtime(lane, it->second, upstream_curves, model,
                                    config.layout, config.upstream_signal, t_start,
                                    t_end, opt.cadence,
                                    stream_seed(opt.seed, "reconstruct"),
                                    opt.m_samples);
      curve = std::move(replay.curve);
      if (counts) {
        auto dep = downstream_curves.find(lane);
        for (const auto& p : curve.points) {
          CountEstimate c = vehicle_count(
              curve, dep == downstream_curves.end() ? CumulativeCurve{} : dep->second,
              p.t);
          *counts << lane << ',' << format_fixed(p.t, 3) << ','
                  << format_general(c.mean) << ',' << format_general(c.variance)
                  << '\n';
        }
      }
    } else {
      throw std::invalid_argument("unknown reconstruction mode: " + opt.mode);
    }
    write_reconstruction_rows(out, curve);
    if (!opt.svg_dir.empty())
      write_band_svg((std::filesystem::path(opt.svg_dir) /
                      (sanitize_lane(lane) + ".svg"))
                         .string(),
                     curve, z90);
    if (curve.fallback_gaps > 0)
      log << "note: lane " << lane << " used the linear fallback in "
          << curve.fallback_gaps << " gap(s)\n";
    ++lanes_done;
  }
  log << "reconstructed " << lanes_done << " lane(s) -> " << opt.out_csv << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::string config_path;
  std::string out_csv = "evaluation.csv";
  std::vector<double> rates = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int seeds = 10;
  std::uint64_t seed = 1;
  int jobs = 0;  // 0 -> hardware concurrency
  std::vector<std::string> modes = {"bacl", "lcnn"};
  CellSettings cell;
};

inline CellSettings cell_for_mode(const CellSettings& base, const std::string& mode) {
  CellSettings s = base;
  if (mode == "bacl") {
    s.mode = BaclMode::bayesian;
    s.feature_mode = FeatureMode::per_lane;
  } else if (mode == "lcnn") {
    s.mode = BaclMode::deterministic;
    s.feature_mode = FeatureMode::per_lane;
  } else if (mode == "bacl_nolink") {
    s.mode = BaclMode::bayesian;
    s.feature_mode = FeatureMode::no_link;
  } else if (mode == "bacl_agg") {
    s.mode = BaclMode::bayesian;
    s.feature_mode = FeatureMode::aggregate;
  } else {
    throw std::invalid_argument("unknown model mode: " + mode);
  }
  return s;
}

inline int cmd_evaluate(const EvaluateOptions& opt, std::ostream& log = std::cout) {
  for (double r : opt.rates)
    if (r <= 0.0 || r > 1.0)
      throw std::invalid_argument("sweep rates must be in (0, 1]");
  if (opt.seeds < 1) throw std::invalid_argument("need at least one seed");
  SimConfig base = load_corridor_config(opt.config_path);

  struct Cell {
    std::string mode;
    double rate;
    std::uint64_t seed;
    CellResult result;
  };
  std::vector<Cell> cells;
  for (const auto& mode : opt.modes) {
    cell_for_mode(opt.cell, mode);  // validate mode names up front
    for (double rate : opt.rates)
      for (int s = 0; s < opt.seeds; ++s)
        cells.push_back(
            {mode, rate, stream_seed(opt.seed, "evaluate.cell", s), {}});
  }

  unsigned jobs = opt.jobs > 0 ? static_cast<unsigned>(opt.jobs)
                               : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min<unsigned>(jobs, static_cast<unsigned>(cells.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) break;
      auto settings = cell_for_mode(opt.cell, cells[i].mode);
      cells[i].result =
          run_historical_cell(base, cells[i].rate, cells[i].seed, settings);
    }
  };
  std::vector<std::thread> pool;
  for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  int failures = 0;
  std::vector<SweepRow> rows;
  for (const auto& mode : opt.modes) {
    for (double rate : opt.rates) {
      std::vector<double> rmses, crpses, coverages;
      int n = 0;
      for (const auto& c : cells) {
        if (c.mode != mode || c.rate != rate) continue;
        if (!c.result.ok) {
          ++failures;
          log << "cell failed (mode " << c.mode << ", rate " << c.rate << "): "
              << c.result.error << "\n";
          continue;
        }
        rmses.push_back(c.result.rmse);
        crpses.push_back(c.result.crps);
        coverages.push_back(c.result.coverage);
        n += c.result.eval_points;
      }
      if (rmses.empty()) continue;
      SweepRow row;
      row.model = mode;
      row.matching_rate = rate;
      row.rmse_mean = mean_of(rmses);
      row.rmse_std = stddev_of(rmses);
      row.crps_mean = mean_of(crpses);
      row.crps_std = stddev_of(crpses);
      row.coverage = mean_of(coverages);
      row.n = n;
      rows.push_back(row);
      log << mode << " @ rate " << format_fixed(rate, 2) << ": rmse "
          << format_fixed(row.rmse_mean, 3) << " +/- "
          << format_fixed(row.rmse_std, 3) << ", crps "
          << format_fixed(row.crps_mean, 3) << ", coverage "
          << format_fixed(row.coverage, 3) << "\n";
    }
  }
  write_sweep_csv(opt.out_csv, rows);
  log << "wrote " << opt.out_csv << " (" << rows.size() << " rows)\n";
  return failures == 0 ? kExitOk : kExitPartial;
}

}  // namespace acr
