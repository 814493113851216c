#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "acr/csv.hpp"
#include "acr/curve.hpp"
#include "acr/matching.hpp"
#include "acr/site.hpp"

namespace acr {

/// Which link-arrival information enters the model input. `per_lane` keeps
/// one accumulation per upstream lane, `aggregate` collapses them to a single
/// sum, `no_link` drops them entirely (ablation settings).
enum class FeatureMode { per_lane, aggregate, no_link };

inline std::string to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::per_lane: return "per_lane";
    case FeatureMode::aggregate: return "aggregate";
    case FeatureMode::no_link: return "no_link";
  }
  return "per_lane";
}

inline FeatureMode feature_mode_from_string(const std::string& s) {
  if (s == "per_lane") return FeatureMode::per_lane;
  if (s == "aggregate") return FeatureMode::aggregate;
  if (s == "no_link") return FeatureMode::no_link;
  throw std::invalid_argument("unknown feature mode: " + s);
}

/// Inputs of the lane choice mapping: observed upstream arrival accumulations
/// over (t_m, t], the reference anchor's time in the signal cycle, and the
/// estimation span.
struct FeatureVector {
  std::vector<double> upstream_accumulations;  // one per l', layout order
  double time_in_cycle = 0.0;                  // t^c_m, seconds
  double span = 0.0;                           // delta = t - t_m, seconds
};

inline std::size_t input_dim(std::size_t n_upstream, FeatureMode mode) {
  switch (mode) {
    case FeatureMode::per_lane: return n_upstream + 2;
    case FeatureMode::aggregate: return 3;
    case FeatureMode::no_link: return 2;
  }
  return n_upstream + 2;
}

inline std::vector<double> to_input(const FeatureVector& fv, FeatureMode mode) {
  std::vector<double> x;
  switch (mode) {
    case FeatureMode::per_lane:
      x = fv.upstream_accumulations;
      break;
    case FeatureMode::aggregate: {
      double total = 0.0;
      for (double v : fv.upstream_accumulations) total += v;
      x.push_back(total);
      break;
    }
    case FeatureMode::no_link:
      break;
  }
  x.push_back(fv.time_in_cycle);
  x.push_back(fv.span);
  return x;
}

struct TrainingSample {
  FeatureVector features;
  double target = 0.0;  // observed lane-based arrival accumulation
  std::string lane;
};

/// Per-feature affine map to zero mean/unit variance. Applied to inputs only;
/// targets stay in vehicle units.
struct Normalization {
  std::vector<double> shift;
  std::vector<double> scale;

  static Normalization identity(std::size_t dim) {
    Normalization n;
    n.shift.assign(dim, 0.0);
    n.scale.assign(dim, 1.0);
    return n;
  }

  static Normalization fit(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw std::invalid_argument("normalization: no rows");
    std::size_t dim = rows[0].size();
    Normalization n;
    n.shift.assign(dim, 0.0);
    n.scale.assign(dim, 1.0);
    for (std::size_t j = 0; j < dim; ++j) {
      double mean = 0.0;
      for (const auto& r : rows) mean += r[j];
      mean /= static_cast<double>(rows.size());
      double var = 0.0;
      for (const auto& r : rows) var += (r[j] - mean) * (r[j] - mean);
      var /= static_cast<double>(rows.size());
      n.shift[j] = mean;
      // Zero-variance feature: shift by the mean, leave the scale at 1.
      n.scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return n;
  }

  std::vector<double> apply(const std::vector<double>& x) const {
    if (x.size() != shift.size())
      throw std::invalid_argument("normalization: dimension mismatch");
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j)
      out[j] = (x[j] - shift[j]) / scale[j];
    return out;
  }

  std::vector<double> invert(const std::vector<double>& z) const {
    if (z.size() != shift.size())
      throw std::invalid_argument("normalization: dimension mismatch");
    std::vector<double> out(z.size());
    for (std::size_t j = 0; j < z.size(); ++j)
      out[j] = z[j] * scale[j] + shift[j];
    return out;
  }
};

/// Feature vector for the interval (t_m, t]. Lanes without an observed curve
/// (unmonitored feeders) contribute zero accumulation.
inline FeatureVector build_prediction_features(
    double t_anchor, double t,
    const std::map<std::string, CumulativeCurve>& upstream_curves,
    const SiteLayout& layout, const SignalTiming& upstream_signal) {
  if (t < t_anchor)
    throw std::invalid_argument("build_prediction_features: query before anchor");
  FeatureVector fv;
  fv.upstream_accumulations.reserve(layout.upstream_lanes.size());
  for (const auto& lane : layout.upstream_lanes) {
    auto it = upstream_curves.find(lane);
    fv.upstream_accumulations.push_back(
        it == upstream_curves.end() ? 0.0
                                    : accumulation_between(it->second, t_anchor, t));
  }
  fv.time_in_cycle = upstream_signal.time_in_cycle(t_anchor);
  fv.span = t - t_anchor;
  return fv;
}

/// Supervised samples from one lane's consecutive matched-vehicle anchors.
///
/// Each gap (t_m, t_{m+1}] yields one sample whose target is the anchor index
/// difference. When a ground-truth arrival curve is supplied (simulated data),
/// `augmentation_k` additional samples are emitted at interior times of each
/// gap so the model sees short spans as well as full gaps; without ground
/// truth the interior targets are unknowable and augmentation is skipped.
inline std::vector<TrainingSample> extract_training_samples(
    const std::vector<MatchedVehiclePair>& lane_pairs,
    const std::map<std::string, CumulativeCurve>& upstream_curves,
    const SiteLayout& layout, const SignalTiming& upstream_signal,
    int augmentation_k = 3, const CumulativeCurve* ground_truth = nullptr,
    std::string* warning = nullptr) {
  std::vector<TrainingSample> samples;
  if (lane_pairs.size() < 2) {
    if (warning)
      *warning = lane_pairs.empty()
                     ? "no matched vehicles in lane"
                     : "fewer than 2 matched vehicles in lane " +
                           lane_pairs.front().downstream_lane;
    return samples;
  }
  for (std::size_t m = 0; m + 1 < lane_pairs.size(); ++m) {
    const auto& a = lane_pairs[m];
    const auto& b = lane_pairs[m + 1];
    if (b.t_upstream < a.t_upstream)
      throw std::invalid_argument("extract_training_samples: pairs not sorted by t_m");
    TrainingSample s;
    s.lane = a.downstream_lane;
    s.features = build_prediction_features(a.t_upstream, b.t_upstream,
                                           upstream_curves, layout, upstream_signal);
    s.target = b.anchor - a.anchor;
    samples.push_back(std::move(s));
    if (ground_truth && augmentation_k > 0) {
      double gap = b.t_upstream - a.t_upstream;
      double truth_at_anchor = ground_truth->value_at(a.t_upstream);
      for (int k = 1; k <= augmentation_k; ++k) {
        double t = a.t_upstream +
                   gap * static_cast<double>(k) / static_cast<double>(augmentation_k + 1);
        TrainingSample aug;
        aug.lane = a.downstream_lane;
        aug.features = build_prediction_features(a.t_upstream, t, upstream_curves,
                                                 layout, upstream_signal);
        aug.target = ground_truth->value_at(t) - truth_at_anchor;
        samples.push_back(std::move(aug));
      }
    }
  }
  return samples;
}

/// Empirical lane choice proportion: observed lane arrivals over observed
/// link arrivals. Diagnostic only; missing when nothing was observed.
inline std::optional<double> empirical_lane_share(
    const std::vector<TrainingSample>& lane_samples) {
  double num = 0.0, den = 0.0;
  for (const auto& s : lane_samples) {
    num += s.target;
    for (double v : s.features.upstream_accumulations) den += v;
  }
  if (den <= 0.0) return std::nullopt;
  return num / den;
}

inline void write_samples_csv(const std::string& path,
                              const std::vector<TrainingSample>& samples,
                              const SiteLayout& layout) {
  auto out = open_output(path);
  out << "lane";
  for (const auto& l : layout.upstream_lanes) out << ",ds_" << l;
  out << ",t_cycle,delta,target\n";
  for (const auto& s : samples) {
    out << s.lane;
    for (double v : s.features.upstream_accumulations) out << ',' << format_general(v);
    out << ',' << format_general(s.features.time_in_cycle) << ','
        << format_general(s.features.span) << ',' << format_general(s.target)
        << '\n';
  }
}

}  // namespace acr
