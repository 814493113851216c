#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "acr/csv.hpp"
#include "acr/curve.hpp"
#include "acr/lpr.hpp"
#include "acr/rng.hpp"
#include "acr/site.hpp"

namespace acr {

/// Demand on one upstream lane during one signal phase, vehicles/hour.
struct DemandSegment {
  std::string phase;
  double rate_vph = 0.0;
};

struct SimConfig {
  std::uint64_t seed = 1;
  double duration = 1800.0;  // seconds of demand generation
  SiteLayout layout;
  SignalTiming upstream_signal;
  SignalTiming downstream_signal;
  // Upstream lane -> piecewise-constant demand by phase.
  std::map<std::string, std::vector<DemandSegment>> demand;
  // Upstream lane -> probability over downstream lanes (layout order).
  std::map<std::string, std::vector<double>> lane_choice;
  // Optional per-phase overrides: phase label -> (upstream lane -> row).
  std::map<std::string, std::map<std::string, std::vector<double>>> lane_choice_by_phase;
  // Downstream lane choice of mid-block merging vehicles.
  std::vector<double> merge_lane_choice;
  // Downstream lane -> label of its discharge phase.
  std::map<std::string, std::string> downstream_phase_of;
  double travel_time_median = 60.0;  // seconds, lognormal median
  double travel_time_sigma = 0.2;    // std dev of log travel time
  double midblock_merge_rate = 0.0;  // vehicles/hour
  double upstream_recognition = 1.0;
  double downstream_recognition = 1.0;
  double saturation_headway = 2.0;   // seconds/vehicle during green

  void validate() const {
    layout.validate();
    upstream_signal.validate();
    downstream_signal.validate();
    if (duration < 0.0) throw std::invalid_argument("sim: duration must be >= 0");
    if (travel_time_median <= 0.0 || travel_time_sigma < 0.0)
      throw std::invalid_argument("sim: bad travel time parameters");
    if (midblock_merge_rate < 0.0)
      throw std::invalid_argument("sim: merge rate must be >= 0");
    if (upstream_recognition < 0.0 || upstream_recognition > 1.0 ||
        downstream_recognition < 0.0 || downstream_recognition > 1.0)
      throw std::invalid_argument("sim: recognition rates must be in [0,1]");
    if (saturation_headway <= 0.0)
      throw std::invalid_argument("sim: saturation headway must be > 0");
    for (const auto& [lane, segs] : demand) {
      layout.upstream_index(lane);
      for (const auto& s : segs) {
        if (s.rate_vph < 0.0)
          throw std::invalid_argument("sim: negative demand on " + lane);
        if (!upstream_signal.find_phase(s.phase))
          throw std::invalid_argument("sim: demand on " + lane +
                                      " names unknown phase " + s.phase);
      }
    }
    auto check_row = [&](const std::string& lane, const std::vector<double>& row) {
      if (row.size() != layout.downstream_lanes.size())
        throw std::invalid_argument("sim: lane choice row for " + lane +
                                    " has wrong length");
      double sum = 0.0;
      for (double p : row) {
        if (p < 0.0 || p > 1.0)
          throw std::invalid_argument("sim: lane choice probability outside [0,1]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("sim: lane choice row for " + lane +
                                    " does not sum to 1");
    };
    for (const auto& [lane, row] : lane_choice) {
      layout.upstream_index(lane);
      check_row(lane, row);
    }
    for (const auto& [lane, segs] : demand) {
      (void)segs;
      if (!lane_choice.count(lane))
        throw std::invalid_argument("sim: no lane choice row for " + lane);
    }
    for (const auto& [phase, rows] : lane_choice_by_phase) {
      if (!upstream_signal.find_phase(phase))
        throw std::invalid_argument("sim: lane choice override for unknown phase " + phase);
      for (const auto& [lane, row] : rows) check_row(lane, row);
    }
    if (midblock_merge_rate > 0.0) check_row("<merge>", merge_lane_choice);
    for (const auto& lane : layout.downstream_lanes) {
      auto it = downstream_phase_of.find(lane);
      if (it == downstream_phase_of.end())
        throw std::invalid_argument("sim: no discharge phase for downstream lane " + lane);
      if (!downstream_signal.find_phase(it->second))
        throw std::invalid_argument("sim: downstream lane " + lane +
                                    " names unknown phase " + it->second);
    }
  }
};

/// Everything the simulator knows about one vehicle.
struct SimVehicle {
  std::string plate;
  std::string upstream_lane;   // empty for mid-block merges
  std::string downstream_lane;
  double entry_time = 0.0;     // link arrival at x1
  double depart_time = 0.0;    // downstream stop-bar departure
  bool merge = false;
};

struct GroundTruth {
  std::vector<SimVehicle> vehicles;
  // True lane-based arrival curves A_l(t) at x1, keyed by downstream lane.
  std::map<std::string, CumulativeCurve> true_arrivals;

  int merge_count() const {
    int n = 0;
    for (const auto& v : vehicles) n += v.merge ? 1 : 0;
    return n;
  }

  int upstream_departures(const std::string& lane) const {
    int n = 0;
    for (const auto& v : vehicles) n += (v.upstream_lane == lane) ? 1 : 0;
    return n;
  }
};

struct SimOutput {
  GroundTruth truth;
  std::vector<LprRecord> upstream;
  std::vector<LprRecord> downstream;
};

namespace detail {

inline std::string make_plate(std::size_t n) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "P%06zu", n);
  return buf;
}

// Poisson process restricted to one phase's window occurrences over [0, dur).
inline void emit_phase_arrivals(const SignalTiming& signal, const PhaseWindow& w,
                                double rate_vph, double duration, Rng& rng,
                                std::vector<double>& out) {
  if (rate_vph <= 0.0) return;
  double rate = rate_vph / 3600.0;
  for (double cycle_start = signal.cycle_origin; cycle_start < duration;
       cycle_start += signal.cycle_length) {
    double begin = cycle_start + w.start;
    double end = std::min(cycle_start + w.end, duration);
    double t = begin;
    while (true) {
      t += rng.exponential(rate);
      if (t >= end) break;
      out.push_back(t);
    }
  }
}

}  // namespace detail

/// Generates ground-truth trajectories and the LPR detections they produce.
///
/// Upstream departures are Poisson within each lane's demand phases; each
/// vehicle picks a downstream lane from the choice matrix; downstream
/// departures follow free-flow travel plus FIFO queue discharge at the
/// saturation headway during the lane's green windows. Mid-block merges enter
/// the link-arrival accounting at their merge time and leave no upstream
/// record, which is what makes link arrivals partially observed.
inline SimOutput simulate(const SimConfig& config) {
  config.validate();
  SimOutput out;

  struct Pending {
    double entry;
    std::string upstream_lane;  // empty for merge
    bool merge;
  };
  std::vector<Pending> pending;

  for (const auto& lane : config.layout.upstream_lanes) {
    auto it = config.demand.find(lane);
    if (it == config.demand.end()) continue;
    Rng rng = Rng::stream(config.seed, "sim.demand", hash_name(lane));
    std::vector<double> times;
    for (const auto& seg : it->second) {
      const PhaseWindow* w = config.upstream_signal.find_phase(seg.phase);
      detail::emit_phase_arrivals(config.upstream_signal, *w, seg.rate_vph,
                                  config.duration, rng, times);
    }
    std::sort(times.begin(), times.end());
    for (double t : times) pending.push_back({t, lane, false});
  }

  if (config.midblock_merge_rate > 0.0) {
    Rng rng = Rng::stream(config.seed, "sim.merge");
    double rate = config.midblock_merge_rate / 3600.0;
    double t = 0.0;
    while (true) {
      t += rng.exponential(rate);
      if (t >= config.duration) break;
      pending.push_back({t, "", true});
    }
  }

  std::sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) {
    if (a.entry != b.entry) return a.entry < b.entry;
    return a.upstream_lane < b.upstream_lane;
  });

  // Downstream lane choice and travel time, drawn in global entry order.
  Rng choice_rng = Rng::stream(config.seed, "sim.choice");
  Rng travel_rng = Rng::stream(config.seed, "sim.travel");
  auto& vehicles = out.truth.vehicles;
  vehicles.reserve(pending.size());
  std::vector<double> free_flow_ready(pending.size());
  for (std::size_t i = 0; i < pending.size(); ++i) {
    const auto& p = pending[i];
    SimVehicle v;
    v.plate = detail::make_plate(i + 1);
    v.upstream_lane = p.upstream_lane;
    v.merge = p.merge;
    v.entry_time = p.entry;
    const std::vector<double>* row;
    if (p.merge) {
      row = &config.merge_lane_choice;
    } else {
      row = &config.lane_choice.at(p.upstream_lane);
      std::string phase = config.upstream_signal.phase_at(p.entry);
      auto by_phase = config.lane_choice_by_phase.find(phase);
      if (by_phase != config.lane_choice_by_phase.end()) {
        auto lane_row = by_phase->second.find(p.upstream_lane);
        if (lane_row != by_phase->second.end()) row = &lane_row->second;
      }
    }
    v.downstream_lane = config.layout.downstream_lanes[choice_rng.categorical(*row)];
    vehicles.push_back(std::move(v));
    free_flow_ready[i] =
        p.entry + travel_rng.lognormal_median(config.travel_time_median,
                                              config.travel_time_sigma);
  }

  // FIFO queue discharge per downstream lane, gated by that lane's green.
  for (const auto& lane : config.layout.downstream_lanes) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < vehicles.size(); ++i)
      if (vehicles[i].downstream_lane == lane) idx.push_back(i);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (vehicles[a].entry_time != vehicles[b].entry_time)
        return vehicles[a].entry_time < vehicles[b].entry_time;
      return vehicles[a].plate < vehicles[b].plate;
    });
    const PhaseWindow* green =
        config.downstream_signal.find_phase(config.downstream_phase_of.at(lane));
    double prev_depart = -1e18;
    for (std::size_t i : idx) {
      double t = std::max(free_flow_ready[i],
                          prev_depart + config.saturation_headway);
      // Project into green; re-check the headway in case the projection moved.
      for (int guard = 0; guard < 8; ++guard) {
        double in_green = config.downstream_signal.next_window_time(t, *green);
        double ok = std::max(in_green, prev_depart + config.saturation_headway);
        if (ok == t) break;
        t = ok;
      }
      vehicles[i].depart_time = t;
      prev_depart = t;
    }
  }

  // True arrival curves from entry times.
  for (const auto& lane : config.layout.downstream_lanes) {
    std::vector<double> entries;
    for (const auto& v : vehicles)
      if (v.downstream_lane == lane) entries.push_back(v.entry_time);
    std::sort(entries.begin(), entries.end());
    CumulativeCurve curve;
    curve.kind = CurveKind::lane_arrival;
    for (std::size_t i = 0; i < entries.size(); ++i)
      curve.points.push_back({entries[i], static_cast<double>(i + 1)});
    out.truth.true_arrivals[lane] = std::move(curve);
  }

  // LPR records for monitored lanes, recognition drawn in canonical order.
  Rng recog_rng = Rng::stream(config.seed, "sim.recognize");
  std::vector<const SimVehicle*> by_plate;
  for (const auto& v : vehicles) by_plate.push_back(&v);
  for (const SimVehicle* v : by_plate) {
    if (!v->merge && config.layout.is_monitored(v->upstream_lane)) {
      LprRecord r;
      r.plate = v->plate;
      r.lane = v->upstream_lane;
      r.timestamp = v->entry_time;
      r.recognized = recog_rng.bernoulli(config.upstream_recognition);
      out.upstream.push_back(std::move(r));
    }
  }
  for (const SimVehicle* v : by_plate) {
    if (config.layout.is_monitored(v->downstream_lane)) {
      LprRecord r;
      r.plate = v->plate;
      r.lane = v->downstream_lane;
      r.timestamp = v->depart_time;
      r.recognized = recog_rng.bernoulli(config.downstream_recognition);
      out.downstream.push_back(std::move(r));
    }
  }
  return out;
}

/// Flips upstream recognized flags so the count of matchable plates becomes
/// round(target_rate x current matchable count). Reproducible under the rng.
/// Returns the number of flips applied.
inline int degrade_to_matching_rate(std::vector<LprRecord>& upstream,
                                    const std::vector<LprRecord>& downstream,
                                    double target_rate, Rng& rng) {
  if (target_rate <= 0.0 || target_rate > 1.0)
    throw std::invalid_argument("degrade_to_matching_rate: rate must be in (0,1]");
  std::set<std::string> down_ok;
  for (const auto& r : downstream)
    if (r.recognized) down_ok.insert(r.plate);
  std::vector<std::string> matchable;
  std::set<std::string> seen;
  for (const auto& r : upstream)
    if (r.recognized && down_ok.count(r.plate) && seen.insert(r.plate).second)
      matchable.push_back(r.plate);
  std::sort(matchable.begin(), matchable.end());
  auto keep = static_cast<std::size_t>(
      std::llround(target_rate * static_cast<double>(matchable.size())));
  if (keep >= matchable.size()) return 0;
  rng.shuffle(matchable);
  std::set<std::string> to_flip(matchable.begin(),
                                matchable.begin() + (matchable.size() - keep));
  int flips = 0;
  for (auto& r : upstream) {
    if (r.recognized && to_flip.count(r.plate)) {
      r.recognized = false;
      ++flips;
    }
  }
  return flips;
}

inline void write_ground_truth_csv(const std::string& path,
                                   const GroundTruth& truth) {
  auto out = open_output(path);
  out << "plate,up_lane,down_lane,entry_time,depart_time,merge_flag\n";
  for (const auto& v : truth.vehicles) {
    out << v.plate << ',' << v.upstream_lane << ',' << v.downstream_lane << ','
        << format_fixed(v.entry_time, 6) << ',' << format_fixed(v.depart_time, 6)
        << ',' << (v.merge ? 1 : 0) << '\n';
  }
}

inline GroundTruth read_ground_truth_csv(const std::string& path,
                                         const SiteLayout& layout) {
  CsvTable table = read_csv(path);
  const std::vector<std::string> expected = {"plate",      "up_lane",
                                             "down_lane",  "entry_time",
                                             "depart_time", "merge_flag"};
  if (table.header != expected)
    throw std::runtime_error("ground truth CSV " + path + ": unexpected header");
  GroundTruth truth;
  for (const auto& row : table.rows) {
    if (row.size() != 6)
      throw std::runtime_error("ground truth CSV " + path + ": malformed row");
    SimVehicle v;
    v.plate = row[0];
    v.upstream_lane = row[1];
    v.downstream_lane = row[2];
    v.entry_time = parse_double(row[3], "entry_time");
    v.depart_time = parse_double(row[4], "depart_time");
    v.merge = parse_long(row[5], "merge_flag") != 0;
    truth.vehicles.push_back(std::move(v));
  }
  for (const auto& lane : layout.downstream_lanes) {
    std::vector<double> entries;
    for (const auto& v : truth.vehicles)
      if (v.downstream_lane == lane) entries.push_back(v.entry_time);
    std::sort(entries.begin(), entries.end());
    CumulativeCurve curve;
    curve.kind = CurveKind::lane_arrival;
    for (std::size_t i = 0; i < entries.size(); ++i)
      curve.points.push_back({entries[i], static_cast<double>(i + 1)});
    truth.true_arrivals[lane] = std::move(curve);
  }
  return truth;
}

/// Default two-intersection corridor: four feeding lanes (the right-turn one
/// unmonitored), three downstream lanes, 120 s cycles, evening-peak demand
/// and a modest mid-block merge flow.
inline SimConfig default_corridor() {
  SimConfig c;
  c.layout.upstream_lanes = {"up:LT", "up:TH1", "up:TH2", "up:RT"};
  c.layout.downstream_lanes = {"down:LT", "down:TH1", "down:TH2"};
  c.layout.monitored["up:RT"] = false;
  c.layout.link_length = 600.0;
  c.layout.free_flow_speed = 12.0;

  c.upstream_signal.cycle_length = 120.0;
  c.upstream_signal.cycle_origin = 0.0;
  c.upstream_signal.phases = {{"LT", 0.0, 25.0}, {"TH", 25.0, 80.0}, {"RT", 80.0, 120.0}};

  c.downstream_signal.cycle_length = 120.0;
  c.downstream_signal.cycle_origin = 0.0;
  c.downstream_signal.phases = {{"LT", 0.0, 30.0}, {"TH", 30.0, 85.0}};

  c.demand["up:LT"] = {{"LT", 300.0}};
  c.demand["up:TH1"] = {{"TH", 550.0}};
  c.demand["up:TH2"] = {{"TH", 550.0}};
  c.demand["up:RT"] = {{"RT", 250.0}};

  c.lane_choice["up:LT"] = {0.15, 0.45, 0.40};
  c.lane_choice["up:TH1"] = {0.30, 0.50, 0.20};
  c.lane_choice["up:TH2"] = {0.10, 0.30, 0.60};
  c.lane_choice["up:RT"] = {0.25, 0.35, 0.40};
  c.merge_lane_choice = {0.34, 0.33, 0.33};

  c.downstream_phase_of = {{"down:LT", "LT"}, {"down:TH1", "TH"}, {"down:TH2", "TH"}};

  c.travel_time_median = 60.0;
  c.travel_time_sigma = 0.2;
  c.midblock_merge_rate = 60.0;
  c.saturation_headway = 2.0;
  c.duration = 1800.0;
  return c;
}

}  // namespace acr
