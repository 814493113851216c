#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "acr/curve.hpp"
#include "acr/lpr.hpp"

namespace acr {

/// One plate matched upstream to downstream. The anchor is the vehicle's
/// cumulative departure index in its downstream lane, which under FIFO equals
/// its lane-based cumulative arrival index.
struct MatchedVehiclePair {
  std::string plate;
  std::string upstream_lane;
  std::string downstream_lane;
  double t_upstream = 0.0;    // t_m, upstream departure = link entry
  double t_downstream = 0.0;  // t'_m, downstream departure
  double anchor = 0.0;        // A*_{l,t_m}
};

struct MatchDiagnostics {
  int rejected_out_of_order = 0;   // plate seen downstream before upstream
  int duplicate_upstream = 0;      // extra occurrences dropped per side
  int duplicate_downstream = 0;
};

namespace detail {

// Earliest recognized record per plate; later occurrences are tallied, not
// silently dropped (re-circulating traffic is outside the model).
inline std::unordered_map<std::string, LprRecord> earliest_by_plate(
    std::vector<LprRecord> records, int& duplicates) {
  std::stable_sort(records.begin(), records.end(), record_before);
  std::unordered_map<std::string, LprRecord> out;
  for (const auto& r : records) {
    if (!r.recognized) continue;
    auto [it, inserted] = out.emplace(r.plate, r);
    (void)it;
    if (!inserted) ++duplicates;
  }
  return out;
}

}  // namespace detail

/// Matches recognized plates across the two intersections. Anchors come from
/// the plate's position in its downstream lane's departure order; the curves
/// passed in are cross-checked against that order so mismatched inputs fail
/// loudly. Output is sorted by downstream lane, then t_m.
inline std::vector<MatchedVehiclePair> match_plates(
    const std::vector<LprRecord>& upstream,
    const std::vector<LprRecord>& downstream,
    const std::map<std::string, CumulativeCurve>& downstream_curves,
    MatchDiagnostics* diagnostics = nullptr) {
  MatchDiagnostics local;
  MatchDiagnostics& diag = diagnostics ? *diagnostics : local;

  auto upstream_first = detail::earliest_by_plate(upstream, diag.duplicate_upstream);

  // Track duplicate downstream plates with the same keep-earliest rule.
  std::unordered_map<std::string, int> downstream_seen;

  std::vector<MatchedVehiclePair> pairs;
  for (auto& [lane, recs] : group_by_lane(downstream)) {
    std::vector<LprRecord> ordered = recs;
    std::stable_sort(ordered.begin(), ordered.end(), record_before);
    double index = 0.0;
    for (const auto& r : ordered) {
      index += 1.0;
      if (!r.recognized) continue;
      int& seen = downstream_seen[r.plate];
      ++seen;
      if (seen > 1) {
        ++diag.duplicate_downstream;
        continue;
      }
      auto it = upstream_first.find(r.plate);
      if (it == upstream_first.end()) continue;
      const LprRecord& up = it->second;
      if (r.timestamp <= up.timestamp) {
        ++diag.rejected_out_of_order;
        continue;
      }
      MatchedVehiclePair pair;
      pair.plate = r.plate;
      pair.upstream_lane = up.lane;
      pair.downstream_lane = lane;
      pair.t_upstream = up.timestamp;
      pair.t_downstream = r.timestamp;
      pair.anchor = index;
      pairs.push_back(std::move(pair));
    }
    auto curve_it = downstream_curves.find(lane);
    if (curve_it != downstream_curves.end() &&
        std::abs(curve_it->second.final_value() - index) > 1e-9)
      throw std::invalid_argument(
          "match_plates: downstream curve for " + lane +
          " disagrees with the record set (curve ends at " +
          std::to_string(curve_it->second.final_value()) + ", records count " +
          std::to_string(index) + ")");
  }

  std::sort(pairs.begin(), pairs.end(),
            [](const MatchedVehiclePair& a, const MatchedVehiclePair& b) {
              if (a.downstream_lane != b.downstream_lane)
                return a.downstream_lane < b.downstream_lane;
              if (a.t_upstream != b.t_upstream) return a.t_upstream < b.t_upstream;
              return a.plate < b.plate;
            });
  return pairs;
}

/// Pairs grouped per downstream lane, preserving the t_m ordering.
inline std::map<std::string, std::vector<MatchedVehiclePair>> pairs_by_lane(
    const std::vector<MatchedVehiclePair>& pairs) {
  std::map<std::string, std::vector<MatchedVehiclePair>> out;
  for (const auto& p : pairs) out[p.downstream_lane].push_back(p);
  return out;
}

}  // namespace acr
