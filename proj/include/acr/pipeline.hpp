#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "acr/bacl.hpp"
#include "acr/curve.hpp"
#include "acr/features.hpp"
#include "acr/matching.hpp"
#include "acr/metrics.hpp"
#include "acr/reconstruct.hpp"
#include "acr/simulator.hpp"

namespace acr {

/// One simulated corridor after matching-rate degradation, with the curves
/// and matched pairs every downstream stage consumes.
struct CorridorData {
  SimOutput sim;
  std::map<std::string, CumulativeCurve> upstream_curves;
  std::map<std::string, CumulativeCurve> downstream_curves;
  std::vector<MatchedVehiclePair> pairs;
  std::map<std::string, std::vector<MatchedVehiclePair>> lane_pairs;
  MatchDiagnostics diagnostics;
};

inline CorridorData prepare_corridor(SimConfig config, double matching_rate,
                                     std::uint64_t degrade_seed) {
  CorridorData data;
  data.sim = simulate(config);
  if (matching_rate < 1.0) {
    Rng rng(degrade_seed);
    degrade_to_matching_rate(data.sim.upstream, data.sim.downstream, matching_rate,
                             rng);
  }
  data.upstream_curves = build_lane_curves(data.sim.upstream);
  data.downstream_curves = build_lane_curves(data.sim.downstream);
  data.pairs = match_plates(data.sim.upstream, data.sim.downstream,
                            data.downstream_curves, &data.diagnostics);
  data.lane_pairs = pairs_by_lane(data.pairs);
  return data;
}

/// Trains one model per downstream lane from a corridor's matched vehicles.
/// Lanes with fewer than two anchors are skipped (reported via `skipped`).
inline std::map<std::string, BaclModel> train_lane_models(
    const CorridorData& data, const SimConfig& config, const Hyperparams& hyper,
    BaclMode mode, FeatureMode feature_mode, int augmentation_k,
    std::uint64_t seed, bool augment_from_truth,
    std::vector<std::string>* skipped = nullptr,
    std::map<std::string, TrainResult>* traces = nullptr) {
  std::map<std::string, BaclModel> models;
  for (const auto& lane : config.layout.downstream_lanes) {
    auto it = data.lane_pairs.find(lane);
    const CumulativeCurve* truth = nullptr;
    if (augment_from_truth) {
      auto t = data.sim.truth.true_arrivals.find(lane);
      if (t != data.sim.truth.true_arrivals.end()) truth = &t->second;
    }
    std::string warning;
    std::vector<TrainingSample> samples;
    if (it != data.lane_pairs.end())
      samples = extract_training_samples(it->second, data.upstream_curves,
                                         config.layout, config.upstream_signal,
                                         augmentation_k, truth, &warning);
    if (samples.empty()) {
      if (skipped) skipped->push_back(lane);
      continue;
    }
    BaclModel model;
    model.lane = lane;
    model.mode = mode;
    model.feature_mode = feature_mode;
    TrainResult tr = train(model, samples, hyper,
                           stream_seed(seed, "train.lane", hash_name(lane)));
    if (traces) (*traces)[lane] = std::move(tr);
    models[lane] = std::move(model);
  }
  return models;
}

struct LaneEval {
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double crps = std::numeric_limits<double>::quiet_NaN();
  int coverage_hits = 0;
  int n = 0;
  double max_anchor_error = 0.0;
  int fallback_gaps = 0;
};

/// Scores a historical reconstruction against the true arrival curve on all
/// grid instants strictly between anchors (anchor instants themselves are
/// observed, not reconstructed).
inline LaneEval evaluate_historical_lane(const ReconstructedCurve& rec,
                                         const CumulativeCurve& truth,
                                         double coverage_level = 0.9) {
  LaneEval eval;
  eval.fallback_gaps = rec.fallback_gaps;
  if (rec.anchors.size() < 2 || rec.points.empty()) return eval;
  std::vector<double> anchor_times;
  for (const auto& a : rec.anchors) anchor_times.push_back(a.t_upstream);
  for (const auto& a : rec.anchors) {
    // Anchor instants must reproduce the matched index exactly.
    for (const auto& p : rec.points)
      if (p.t == a.t_upstream)
        eval.max_anchor_error =
            std::max(eval.max_anchor_error, std::abs(p.mean - a.anchor));
  }
  double z = normal_quantile(0.5 + coverage_level / 2.0);
  double sq_sum = 0.0, crps_sum = 0.0;
  for (const auto& p : rec.points) {
    if (p.t <= anchor_times.front() || p.t >= anchor_times.back()) continue;
    bool is_anchor = false;
    for (double ta : anchor_times)
      if (std::abs(p.t - ta) < 1e-12) {
        is_anchor = true;
        break;
      }
    if (is_anchor) continue;
    double actual = truth.value_at(p.t);
    double err = actual - p.mean;
    double sigma = std::sqrt(p.var_total());
    sq_sum += err * err;
    crps_sum += crps_gaussian(p.mean, sigma, actual);
    if (std::abs(err) <= z * sigma) ++eval.coverage_hits;
    ++eval.n;
  }
  if (eval.n > 0) {
    eval.rmse = std::sqrt(sq_sum / eval.n);
    eval.crps = crps_sum / eval.n;
  }
  return eval;
}

/// Naive baseline: linear interpolation of the cumulative index between
/// consecutive anchors, scored on the same grid instants as the model.
inline double linear_interpolation_rmse(const std::vector<MatchedVehiclePair>& anchors,
                                        const CumulativeCurve& truth,
                                        double grid_step) {
  double sq_sum = 0.0;
  int n = 0;
  for (std::size_t m = 0; m + 1 < anchors.size(); ++m) {
    const auto& a = anchors[m];
    const auto& b = anchors[m + 1];
    double gap = b.t_upstream - a.t_upstream;
    if (gap <= 0.0) continue;
    for (double t = a.t_upstream + grid_step; t < b.t_upstream - 1e-12;
         t += grid_step) {
      double u = (t - a.t_upstream) / gap;
      double mean = a.anchor + u * (b.anchor - a.anchor);
      double err = truth.value_at(t) - mean;
      sq_sum += err * err;
      ++n;
    }
  }
  return n > 0 ? std::sqrt(sq_sum / n) : std::numeric_limits<double>::quiet_NaN();
}

struct CellSettings {
  double train_duration = 3600.0;
  double eval_duration = 1800.0;
  double grid_step = 1.0;
  int prediction_samples = 100;
  int augmentation_k = 3;
  Hyperparams hyper;
  BaclMode mode = BaclMode::bayesian;
  FeatureMode feature_mode = FeatureMode::per_lane;
};

struct CellResult {
  bool ok = false;
  std::string error;
  double rmse = std::numeric_limits<double>::quiet_NaN();  // lane-averaged
  double crps = std::numeric_limits<double>::quiet_NaN();  // lane-averaged
  double coverage = std::numeric_limits<double>::quiet_NaN();  // pooled
  double max_anchor_error = 0.0;
  int fallback_gaps = 0;
  int eval_points = 0;
  std::map<std::string, LaneEval> lanes;
};

/// One sweep cell: simulate independent train/eval corridors at the given
/// matching rate, train per-lane models, reconstruct the eval corridor
/// historically, and score against ground truth.
inline CellResult run_historical_cell(const SimConfig& base, double matching_rate,
                                      std::uint64_t seed, const CellSettings& s) {
  CellResult result;
  try {
    SimConfig train_cfg = base;
    train_cfg.duration = s.train_duration;
    train_cfg.seed = stream_seed(seed, "cell.sim.train");
    SimConfig eval_cfg = base;
    eval_cfg.duration = s.eval_duration;
    eval_cfg.seed = stream_seed(seed, "cell.sim.eval");

    CorridorData train_data = prepare_corridor(
        train_cfg, matching_rate, stream_seed(seed, "cell.degrade.train"));
    CorridorData eval_data = prepare_corridor(
        eval_cfg, matching_rate, stream_seed(seed, "cell.degrade.eval"));

    auto models =
        train_lane_models(train_data, train_cfg, s.hyper, s.mode, s.feature_mode,
                          s.augmentation_k, stream_seed(seed, "cell.train"), true);

    std::vector<double> lane_rmse, lane_crps;
    int hits = 0, total = 0;
    for (const auto& [lane, model] : models) {
      auto it = eval_data.lane_pairs.find(lane);
      if (it == eval_data.lane_pairs.end() || it->second.size() < 2) continue;
      auto rec = historical_acr(lane, it->second, eval_data.upstream_curves, model,
                                eval_cfg.layout, eval_cfg.upstream_signal,
                                s.grid_step, stream_seed(seed, "cell.reconstruct"),
                                s.prediction_samples);
      auto eval = evaluate_historical_lane(
          rec, eval_data.sim.truth.true_arrivals.at(lane));
      result.max_anchor_error = std::max(result.max_anchor_error, eval.max_anchor_error);
      result.fallback_gaps += eval.fallback_gaps;
      if (eval.n > 0) {
        lane_rmse.push_back(eval.rmse);
        lane_crps.push_back(eval.crps);
        hits += eval.coverage_hits;
        total += eval.n;
      }
      result.lanes[lane] = eval;
    }
    if (!lane_rmse.empty()) {
      result.rmse = mean_of(lane_rmse);
      result.crps = mean_of(lane_crps);
      result.coverage = total > 0 ? static_cast<double>(hits) / total
                                  : std::numeric_limits<double>::quiet_NaN();
      result.eval_points = total;
      result.ok = true;
    } else {
      result.error = "no lane produced evaluable reconstructions";
    }
  } catch (const std::exception& e) {
    result.error = e.what();
  }
  return result;
}

struct RealtimeEval {
  std::vector<double> abs_errors;        // |estimated mean - true arrivals|
  std::vector<double> count_abs_errors;  // |estimated count - true count|
  int queries = 0;

  double fraction_within(double tol) const {
    if (abs_errors.empty()) return 0.0;
    int n = 0;
    for (double e : abs_errors) n += e <= tol ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(abs_errors.size());
  }

  double count_fraction_within(double tol) const {
    if (count_abs_errors.empty()) return 0.0;
    int n = 0;
    for (double e : count_abs_errors) n += e <= tol ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(count_abs_errors.size());
  }
};

/// Replays the eval corridor through the real-time path for one lane and
/// scores arrivals and vehicle counts against ground truth at each query.
inline RealtimeEval evaluate_realtime_lane(const CorridorData& eval_data,
                                           const SimConfig& eval_cfg,
                                           const std::string& lane,
                                           const BaclModel& model, double t_start,
                                           double t_end, double cadence,
                                           std::uint64_t seed, int m_samples) {
  RealtimeEval out;
  auto it = eval_data.lane_pairs.find(lane);
  if (it == eval_data.lane_pairs.end() || it->second.empty()) return out;
  auto replay = replay_realtime(lane, it->second, eval_data.upstream_curves, model,
                                eval_cfg.layout, eval_cfg.upstream_signal, t_start,
                                t_end, cadence, seed, m_samples);
  const auto& truth = eval_data.sim.truth.true_arrivals.at(lane);
  const auto& departures = eval_data.downstream_curves.at(lane);
  for (const auto& p : replay.curve.points) {
    double actual = truth.value_at(p.t);
    out.abs_errors.push_back(std::abs(actual - p.mean));
    double est_count = std::max(0.0, p.mean - departures.value_at(p.t));
    double true_count = actual - departures.value_at(p.t);
    out.count_abs_errors.push_back(std::abs(true_count - est_count));
    ++out.queries;
  }
  return out;
}

}  // namespace acr
