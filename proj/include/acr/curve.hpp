#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "acr/lpr.hpp"
#include "acr/site.hpp"

namespace acr {

enum class CurveKind { departure, link_arrival, lane_arrival };

struct CurvePoint {
  double t = 0.0;
  double value = 0.0;
};

/// Non-decreasing step function from time to a cumulative vehicle index.
/// Evaluation is right-continuous: the value at t is the value of the latest
/// point with timestamp <= t, and 0 before the first point.
struct CumulativeCurve {
  std::vector<CurvePoint> points;
  CurveKind kind = CurveKind::departure;

  bool empty() const { return points.empty(); }

  double value_at(double t) const {
    auto it = std::upper_bound(
        points.begin(), points.end(), t,
        [](double q, const CurvePoint& p) { return q < p.t; });
    if (it == points.begin()) return 0.0;
    return std::prev(it)->value;
  }

  double final_value() const { return points.empty() ? 0.0 : points.back().value; }

  double start_time() const {
    if (points.empty()) throw std::invalid_argument("empty curve has no start time");
    return points.front().t;
  }

  double end_time() const {
    if (points.empty()) throw std::invalid_argument("empty curve has no end time");
    return points.back().t;
  }

  /// Checks ordering and monotonicity; for observed curves also checks that
  /// consecutive indices step by exactly one.
  void validate(bool observed = false) const {
    for (std::size_t i = 1; i < points.size(); ++i) {
      if (points[i].t < points[i - 1].t)
        throw std::invalid_argument("curve timestamps out of order");
      if (points[i].value < points[i - 1].value)
        throw std::invalid_argument("curve values decrease");
      if (observed && std::abs(points[i].value - points[i - 1].value - 1.0) > 1e-12)
        throw std::invalid_argument("observed curve indices must step by 1");
    }
  }
};

/// Orders one lane's records by (timestamp, plate) and indexes them 1..n.
/// Unrecognized records advance the curve too; only matching needs the plate.
inline CumulativeCurve build_departure_curve(std::vector<LprRecord> records) {
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].lane != records[0].lane)
      throw std::invalid_argument("build_departure_curve: mixed lane ids (" +
                                  records[0].lane + " vs " + records[i].lane + ")");
  std::stable_sort(records.begin(), records.end(), record_before);
  CumulativeCurve curve;
  curve.kind = CurveKind::departure;
  curve.points.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    curve.points.push_back({records[i].timestamp, static_cast<double>(i + 1)});
  return curve;
}

/// Link-based arrival curve: the merged sum of the upstream lane departure
/// curves, S*(t) = sum over l' of D*_{l'}(t).
inline CumulativeCurve link_arrival_curve(
    const std::vector<CumulativeCurve>& upstream_curves) {
  std::vector<CurvePoint> deltas;
  for (const auto& c : upstream_curves) {
    double prev = 0.0;
    for (const auto& p : c.points) {
      deltas.push_back({p.t, p.value - prev});
      prev = p.value;
    }
  }
  std::sort(deltas.begin(), deltas.end(),
            [](const CurvePoint& a, const CurvePoint& b) { return a.t < b.t; });
  CumulativeCurve out;
  out.kind = CurveKind::link_arrival;
  double total = 0.0;
  for (const auto& d : deltas) {
    total += d.value;
    if (!out.points.empty() && out.points.back().t == d.t)
      out.points.back().value = total;
    else
      out.points.push_back({d.t, total});
  }
  return out;
}

inline double curve_value(const CumulativeCurve& curve, double t) {
  return curve.value_at(t);
}

/// Arrival/departure accumulation over (t_a, t_b].
inline double accumulation_between(const CumulativeCurve& curve, double t_a,
                                   double t_b) {
  if (t_a > t_b)
    throw std::invalid_argument("accumulation_between: t_a must be <= t_b");
  return curve.value_at(t_b) - curve.value_at(t_a);
}

/// Curve translated to a section x meters into the link at free-flow speed:
/// timestamps shift by +x / v_f, indices unchanged.
inline CumulativeCurve shift_to_section(const CumulativeCurve& curve, double x,
                                        const SiteLayout& layout) {
  if (x < 0.0 || x > layout.link_length)
    throw std::invalid_argument("shift_to_section: x outside [0, link_length]");
  CumulativeCurve out = curve;
  double dt = x / layout.free_flow_speed;
  for (auto& p : out.points) p.t += dt;
  return out;
}

/// Per-lane departure curves for every lane present in the record set.
inline std::map<std::string, CumulativeCurve> build_lane_curves(
    const std::vector<LprRecord>& records) {
  std::map<std::string, CumulativeCurve> out;
  for (auto& [lane, recs] : group_by_lane(records))
    out[lane] = build_departure_curve(recs);
  return out;
}

}  // namespace acr
