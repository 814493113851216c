#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "acr/bacl.hpp"
#include "acr/curve.hpp"
#include "acr/features.hpp"
#include "acr/matching.hpp"
#include "acr/rng.hpp"
#include "acr/site.hpp"

namespace acr {

enum class ReconstructionMode { historical, realtime };

inline std::string to_string(ReconstructionMode m) {
  return m == ReconstructionMode::historical ? "historical" : "realtime";
}

struct ReconstructedPoint {
  double t = 0.0;
  double mean = 0.0;  // cumulative arrival index, monotone after projection
  double var_epistemic = 0.0;
  double var_aleatoric = 0.0;

  double var_total() const { return var_epistemic + var_aleatoric; }
};

struct ReconstructedCurve {
  std::string lane;
  ReconstructionMode mode = ReconstructionMode::historical;
  std::vector<ReconstructedPoint> points;
  std::vector<MatchedVehiclePair> anchors;  // anchors the estimate is tied to
  int fallback_gaps = 0;  // gaps where the model predicted ~0 against observed arrivals

  /// Right-continuous step evaluation of the reconstructed mean, restricted
  /// to the curve's own time domain.
  const ReconstructedPoint& at_time(double t) const {
    if (points.empty())
      throw std::invalid_argument("reconstructed curve is empty");
    if (t < points.front().t || t > points.back().t)
      throw std::invalid_argument("time outside the reconstructed domain");
    auto it = std::upper_bound(
        points.begin(), points.end(), t,
        [](double q, const ReconstructedPoint& p) { return q < p.t; });
    return *std::prev(it);
  }
};

namespace detail {

constexpr double kLambdaEpsilon = 1e-6;

// Variance taper for the historical mode: zero at both anchors, peaking at
// the gap midpoint (matched vehicles pin the curve exactly at the ends).
inline double anchor_taper(double u) { return 4.0 * u * (1.0 - u); }

}  // namespace detail

/// Historical reconstruction of one lane between its matched-vehicle anchors.
///
/// For each gap (t_m, t_{m+1}] the model predicts arrival accumulations on the
/// grid; the boundary factor lambda = observed gap total / predicted total at
/// the right end rescales the prediction so the curve lands exactly on the
/// next anchor. Predicted variance is scaled by lambda^2 and tapered to zero
/// at both anchors. If the model predicts ~0 where arrivals were observed,
/// the observed total is spread linearly across the gap and the event is
/// counted in `fallback_gaps`.
inline ReconstructedCurve historical_acr(
    const std::string& lane, const std::vector<MatchedVehiclePair>& anchors,
    const std::map<std::string, CumulativeCurve>& upstream_curves,
    const BaclModel& model, const SiteLayout& layout,
    const SignalTiming& upstream_signal, double grid_step,
    std::uint64_t root_seed, int m_samples) {
  if (anchors.size() < 2)
    throw std::invalid_argument("historical_acr: need at least 2 anchors");
  if (grid_step <= 0.0)
    throw std::invalid_argument("historical_acr: grid step must be > 0");
  for (std::size_t i = 1; i < anchors.size(); ++i)
    if (anchors[i].t_upstream < anchors[i - 1].t_upstream)
      throw std::invalid_argument("historical_acr: anchors not sorted by t_m");

  ReconstructedCurve curve;
  curve.lane = lane;
  curve.mode = ReconstructionMode::historical;
  curve.anchors = anchors;
  curve.points.push_back({anchors.front().t_upstream, anchors.front().anchor, 0.0, 0.0});

  for (std::size_t m = 0; m + 1 < anchors.size(); ++m) {
    const auto& left = anchors[m];
    const auto& right = anchors[m + 1];
    double gap = right.t_upstream - left.t_upstream;
    double observed = right.anchor - left.anchor;
    if (gap <= 0.0) {
      curve.points.push_back({right.t_upstream, right.anchor, 0.0, 0.0});
      continue;
    }

    std::vector<double> times;
    for (double t = left.t_upstream + grid_step; t < right.t_upstream - 1e-12;
         t += grid_step)
      times.push_back(t);
    times.push_back(right.t_upstream);

    std::vector<FeatureVector> feats;
    feats.reserve(times.size());
    for (double t : times)
      feats.push_back(build_prediction_features(left.t_upstream, t, upstream_curves,
                                                layout, upstream_signal));
    auto preds = predict_features(
        model, feats, m_samples,
        stream_seed(root_seed, "hist.predict", hash_name(lane),
                    double_bits(left.t_upstream)));

    double predicted_end = preds.back().mean;
    bool fallback = predicted_end <= detail::kLambdaEpsilon && observed > 0.0;
    double lambda = 0.0;
    if (fallback)
      ++curve.fallback_gaps;
    else if (predicted_end > detail::kLambdaEpsilon)
      lambda = observed / predicted_end;

    double running = left.anchor;
    for (std::size_t i = 0; i < times.size(); ++i) {
      double u = (times[i] - left.t_upstream) / gap;
      double mean, var_scale;
      if (fallback) {
        mean = left.anchor + observed * u;
        var_scale = detail::anchor_taper(u);
      } else {
        mean = left.anchor + lambda * preds[i].mean;
        var_scale = lambda * lambda * detail::anchor_taper(u);
      }
      running = std::min(std::max(running, mean), right.anchor);
      curve.points.push_back({times[i], running,
                              var_scale * preds[i].var_epistemic,
                              var_scale * preds[i].var_aleatoric});
    }
  }
  return curve;
}

/// Real-time reconstruction beyond the newest matched vehicle. Queries use
/// only upstream events with timestamps at or before the query time (step
/// evaluation enforces that), there is no right boundary so no lambda, and
/// variance is left untapered. The emitted sequence is made non-decreasing by
/// a running maximum over the given query order.
inline ReconstructedCurve realtime_acr(
    const std::string& lane, const MatchedVehiclePair& anchor,
    const std::map<std::string, CumulativeCurve>& upstream_curves,
    const BaclModel& model, const SiteLayout& layout,
    const SignalTiming& upstream_signal, const std::vector<double>& query_times,
    std::uint64_t root_seed, int m_samples) {
  ReconstructedCurve curve;
  curve.lane = lane;
  curve.mode = ReconstructionMode::realtime;
  curve.anchors = {anchor};
  if (query_times.empty()) return curve;
  for (double t : query_times)
    if (t < anchor.t_upstream)
      throw std::invalid_argument("realtime_acr: query before the reference anchor");

  std::vector<FeatureVector> feats;
  feats.reserve(query_times.size());
  for (double t : query_times)
    feats.push_back(build_prediction_features(anchor.t_upstream, t, upstream_curves,
                                              layout, upstream_signal));
  auto preds = predict_features(
      model, feats, m_samples,
      stream_seed(root_seed, "rt.predict", hash_name(lane),
                  double_bits(anchor.t_upstream)));

  double running = anchor.anchor;
  for (std::size_t i = 0; i < query_times.size(); ++i) {
    running = std::max(running, anchor.anchor + preds[i].mean);
    curve.points.push_back({query_times[i], running, preds[i].var_epistemic,
                            preds[i].var_aleatoric});
  }
  return curve;
}

/// Streaming bookkeeping for the real-time mode: the newest anchor, the gaps
/// it has closed (ready for historical reconstruction), and tallies for
/// rejected updates. Output already emitted is never retro-edited.
struct RealtimeState {
  std::optional<MatchedVehiclePair> anchor;
  std::vector<std::pair<MatchedVehiclePair, MatchedVehiclePair>> closed_gaps;
  int ignored_out_of_order = 0;
  int duplicates = 0;

  bool warming_up() const { return !anchor.has_value(); }
};

/// Applies a newly discovered matched vehicle. Returns true when the
/// reference anchor advanced; duplicates and pairs older than the current
/// reference are tallied and ignored.
inline bool re_anchor(RealtimeState& state, const MatchedVehiclePair& pair) {
  if (state.anchor) {
    if (pair.plate == state.anchor->plate &&
        pair.t_upstream == state.anchor->t_upstream) {
      ++state.duplicates;
      return false;
    }
    if (pair.t_upstream < state.anchor->t_upstream) {
      ++state.ignored_out_of_order;
      return false;
    }
    state.closed_gaps.emplace_back(*state.anchor, pair);
  }
  state.anchor = pair;
  return true;
}

struct RealtimeReplayResult {
  ReconstructedCurve curve;
  RealtimeState state;
  int skipped_warmup = 0;  // query instants before the first matched vehicle
};

/// Replays a day through the real-time path: pairs become visible at their
/// downstream departure time, the reference anchor advances via re_anchor,
/// and estimates are emitted at a fixed cadence. The emitted stream is
/// append-only; a re-anchor may legitimately step the estimate down.
inline RealtimeReplayResult replay_realtime(
    const std::string& lane, std::vector<MatchedVehiclePair> pairs,
    const std::map<std::string, CumulativeCurve>& upstream_curves,
    const BaclModel& model, const SiteLayout& layout,
    const SignalTiming& upstream_signal, double t_start, double t_end,
    double cadence, std::uint64_t root_seed, int m_samples) {
  if (cadence <= 0.0)
    throw std::invalid_argument("replay_realtime: cadence must be > 0");
  std::sort(pairs.begin(), pairs.end(),
            [](const MatchedVehiclePair& a, const MatchedVehiclePair& b) {
              return a.t_downstream < b.t_downstream;
            });
  RealtimeReplayResult out;
  out.curve.lane = lane;
  out.curve.mode = ReconstructionMode::realtime;

  std::size_t next_pair = 0;
  double running = 0.0;
  bool segment_open = false;
  for (double t = t_start; t <= t_end + 1e-9; t += cadence) {
    while (next_pair < pairs.size() && pairs[next_pair].t_downstream <= t) {
      if (re_anchor(out.state, pairs[next_pair])) segment_open = false;
      ++next_pair;
    }
    if (out.state.warming_up()) {
      ++out.skipped_warmup;
      continue;
    }
    const auto& anchor = *out.state.anchor;
    auto one = realtime_acr(lane, anchor, upstream_curves, model, layout,
                            upstream_signal, {t}, root_seed, m_samples);
    const auto& p = one.points.front();
    if (!segment_open) {
      running = p.mean;
      segment_open = true;
    } else {
      running = std::max(running, p.mean);
    }
    out.curve.points.push_back({p.t, running, p.var_epistemic, p.var_aleatoric});
  }
  out.curve.anchors = out.state.anchor
                          ? std::vector<MatchedVehiclePair>{*out.state.anchor}
                          : std::vector<MatchedVehiclePair>{};
  return out;
}

struct CountEstimate {
  double mean = 0.0;      // vehicles stored on the lane, clamped at 0
  double raw_mean = 0.0;  // pre-clamp
  double variance = 0.0;  // departures are observed, so this is A's variance
};

/// Real-time lane vehicle count: reconstructed arrivals minus observed
/// departures at time t.
inline CountEstimate vehicle_count(const ReconstructedCurve& arrivals,
                                   const CumulativeCurve& departures, double t) {
  const auto& p = arrivals.at_time(t);
  CountEstimate c;
  c.raw_mean = p.mean - departures.value_at(t);
  c.mean = std::max(0.0, c.raw_mean);
  c.variance = p.var_total();
  return c;
}

}  // namespace acr
