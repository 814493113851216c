#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace acr {

/// Static description of the two-intersection link: which upstream lanes feed
/// it, which downstream lanes it carries, and the free-flow geometry.
struct SiteLayout {
  std::vector<std::string> upstream_lanes;    // feeding lanes (the l' set)
  std::vector<std::string> downstream_lanes;  // target-link lanes (the l set)
  std::map<std::string, bool> monitored;      // lanes absent default to true
  double link_length = 0.0;                   // meters
  double free_flow_speed = 0.0;               // meters/second

  bool is_monitored(const std::string& lane) const {
    auto it = monitored.find(lane);
    return it == monitored.end() ? true : it->second;
  }

  bool has_lane(const std::string& lane) const {
    return std::find(upstream_lanes.begin(), upstream_lanes.end(), lane) !=
               upstream_lanes.end() ||
           std::find(downstream_lanes.begin(), downstream_lanes.end(), lane) !=
               downstream_lanes.end();
  }

  std::size_t upstream_index(const std::string& lane) const {
    auto it = std::find(upstream_lanes.begin(), upstream_lanes.end(), lane);
    if (it == upstream_lanes.end())
      throw std::invalid_argument("unknown upstream lane: " + lane);
    return static_cast<std::size_t>(it - upstream_lanes.begin());
  }

  std::size_t downstream_index(const std::string& lane) const {
    auto it = std::find(downstream_lanes.begin(), downstream_lanes.end(), lane);
    if (it == downstream_lanes.end())
      throw std::invalid_argument("unknown downstream lane: " + lane);
    return static_cast<std::size_t>(it - downstream_lanes.begin());
  }

  void validate() const {
    if (upstream_lanes.empty() || downstream_lanes.empty())
      throw std::invalid_argument("site layout: lane lists must be non-empty");
    for (const auto& u : upstream_lanes)
      for (const auto& d : downstream_lanes)
        if (u == d)
          throw std::invalid_argument(
              "site layout: upstream and downstream lanes must be disjoint (" +
              u + ")");
    if (link_length <= 0.0)
      throw std::invalid_argument("site layout: link_length must be > 0");
    if (free_flow_speed <= 0.0)
      throw std::invalid_argument("site layout: free_flow_speed must be > 0");
    for (const auto& [lane, flag] : monitored) {
      (void)flag;
      if (!has_lane(lane))
        throw std::invalid_argument("site layout: monitored flag for unknown lane " + lane);
    }
  }
};

struct PhaseWindow {
  std::string label;
  double start = 0.0;  // offset within the cycle, seconds
  double end = 0.0;    // exclusive, <= cycle length
};

struct SignalTiming {
  double cycle_length = 0.0;
  double cycle_origin = 0.0;  // timestamp of a cycle start
  std::vector<PhaseWindow> phases;

  /// Offset of t within the cycle, in [0, cycle_length).
  double time_in_cycle(double t) const {
    double r = std::fmod(t - cycle_origin, cycle_length);
    if (r < 0.0) r += cycle_length;
    return r;
  }

  /// Label of the first phase window containing t, or empty string.
  std::string phase_at(double t) const {
    double pos = time_in_cycle(t);
    for (const auto& p : phases)
      if (pos >= p.start && pos < p.end) return p.label;
    return "";
  }

  const PhaseWindow* find_phase(const std::string& label) const {
    for (const auto& p : phases)
      if (p.label == label) return &p;
    return nullptr;
  }

  /// Earliest time >= t falling inside the named window.
  double next_window_time(double t, const PhaseWindow& w) const {
    double pos = time_in_cycle(t);
    if (pos >= w.start && pos < w.end) return t;
    if (pos < w.start) return t + (w.start - pos);
    return t + (cycle_length - pos) + w.start;
  }

  void validate() const {
    if (cycle_length <= 0.0)
      throw std::invalid_argument("signal timing: cycle_length must be > 0");
    for (const auto& p : phases) {
      if (p.start < 0.0 || p.start >= cycle_length)
        throw std::invalid_argument("signal timing: phase '" + p.label +
                                    "' start outside [0, cycle)");
      if (p.end <= p.start || p.end > cycle_length)
        throw std::invalid_argument("signal timing: phase '" + p.label +
                                    "' window exceeds the cycle");
    }
  }
};

}  // namespace acr
