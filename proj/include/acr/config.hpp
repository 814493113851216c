#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "acr/csv.hpp"
#include "acr/simulator.hpp"
#include "acr/site.hpp"

namespace acr {

/// Plain-text key=value configuration. '#' starts a comment, keys may repeat
/// (phase windows, demand segments), order is preserved.
struct KvConfig {
  std::vector<std::pair<std::string, std::string>> entries;

  std::optional<std::string> get(const std::string& key) const {
    std::optional<std::string> out;
    for (const auto& [k, v] : entries)
      if (k == key) out = v;  // last one wins
    return out;
  }

  std::vector<std::string> get_all(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries)
      if (k == key) out.push_back(v);
    return out;
  }

  std::string require(const std::string& key) const {
    auto v = get(key);
    if (!v) throw std::runtime_error("config: missing required key '" + key + "'");
    return *v;
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    return v ? parse_double(*v, key) : fallback;
  }

  /// Keys of the form `prefix.suffix`, with the prefix stripped.
  std::vector<std::string> suffixes_of(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries) {
      (void)v;
      if (k.size() > prefix.size() + 1 && k.compare(0, prefix.size(), prefix) == 0 &&
          k[prefix.size()] == '.')
        out.push_back(k.substr(prefix.size() + 1));
    }
    return out;
  }
};

inline KvConfig parse_kv_text(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": empty key");
    cfg.entries.emplace_back(std::move(key), std::move(value));
  }
  return cfg;
}

inline KvConfig parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_kv_text(buf.str());
}

namespace detail {

inline std::vector<std::string> parse_name_list(const std::string& value) {
  std::vector<std::string> out;
  for (auto& part : split(value, ',')) {
    std::string name = trim(part);
    if (!name.empty()) out.push_back(std::move(name));
  }
  return out;
}

inline std::vector<double> parse_number_list(const std::string& value,
                                             const std::string& key) {
  std::vector<double> out;
  for (auto& part : split(value, ','))
    out.push_back(parse_double(trim(part), key));
  return out;
}

inline SignalTiming parse_signal(const KvConfig& cfg, const std::string& prefix) {
  SignalTiming s;
  s.cycle_length = parse_double(cfg.require(prefix + ".cycle"), prefix + ".cycle");
  s.cycle_origin = cfg.get_double(prefix + ".origin", 0.0);
  for (const auto& value : cfg.get_all(prefix + ".phase")) {
    auto parts = split(value, ':');
    if (parts.size() != 3)
      throw std::runtime_error("config: " + prefix +
                               ".phase expects LABEL:start:end, got '" + value + "'");
    PhaseWindow w;
    w.label = trim(parts[0]);
    w.start = parse_double(trim(parts[1]), prefix + ".phase start");
    w.end = parse_double(trim(parts[2]), prefix + ".phase end");
    s.phases.push_back(std::move(w));
  }
  s.validate();
  return s;
}

}  // namespace detail

/// Builds a full simulation configuration (site layout, both signals, demand,
/// lane choice, noise parameters) from a key=value file. The format is
/// documented in the README; `acr simulate --dump-config` writes a complete
/// example.
inline SimConfig sim_config_from_kv(const KvConfig& cfg) {
  SimConfig c;
  c.layout.upstream_lanes = detail::parse_name_list(cfg.require("site.upstream_lanes"));
  c.layout.downstream_lanes =
      detail::parse_name_list(cfg.require("site.downstream_lanes"));
  if (auto v = cfg.get("site.unmonitored"))
    for (const auto& lane : detail::parse_name_list(*v))
      c.layout.monitored[lane] = false;
  c.layout.link_length = parse_double(cfg.require("site.link_length"), "site.link_length");
  c.layout.free_flow_speed =
      parse_double(cfg.require("site.free_flow_speed"), "site.free_flow_speed");

  c.upstream_signal = detail::parse_signal(cfg, "signal.up");
  c.downstream_signal = detail::parse_signal(cfg, "signal.down");

  c.duration = cfg.get_double("sim.duration", c.duration);
  c.travel_time_median = cfg.get_double("sim.travel_time_median", c.travel_time_median);
  c.travel_time_sigma = cfg.get_double("sim.travel_time_sigma", c.travel_time_sigma);
  c.midblock_merge_rate = cfg.get_double("sim.midblock_merge_rate", c.midblock_merge_rate);
  c.upstream_recognition =
      cfg.get_double("sim.recognition_rate.up", c.upstream_recognition);
  c.downstream_recognition =
      cfg.get_double("sim.recognition_rate.down", c.downstream_recognition);
  c.saturation_headway = cfg.get_double("sim.saturation_headway", c.saturation_headway);
  if (auto v = cfg.get("sim.seed"))
    c.seed = static_cast<std::uint64_t>(parse_long(*v, "sim.seed"));

  for (const auto& lane : cfg.suffixes_of("sim.demand")) {
    std::vector<DemandSegment> segs;
    for (const auto& value : cfg.get_all("sim.demand." + lane)) {
      for (auto& part : split(value, ',')) {
        auto fields = split(trim(part), ':');
        if (fields.size() != 2)
          throw std::runtime_error("config: sim.demand." + lane +
                                   " expects PHASE:veh_per_hour entries");
        segs.push_back({trim(fields[0]),
                        parse_double(trim(fields[1]), "sim.demand." + lane)});
      }
    }
    c.demand[lane] = std::move(segs);
  }

  for (const auto& suffix : cfg.suffixes_of("sim.choice")) {
    auto row = detail::parse_number_list(cfg.require("sim.choice." + suffix),
                                         "sim.choice." + suffix);
    auto at = suffix.find('@');
    if (at == std::string::npos) {
      c.lane_choice[suffix] = std::move(row);
    } else {
      // per-phase override written as sim.choice.<lane>@<phase>
      std::string lane = suffix.substr(0, at);
      std::string phase = suffix.substr(at + 1);
      c.lane_choice_by_phase[phase][lane] = std::move(row);
    }
  }
  if (auto v = cfg.get("sim.merge_choice"))
    c.merge_lane_choice = detail::parse_number_list(*v, "sim.merge_choice");

  for (const auto& lane : cfg.suffixes_of("sim.phase_of"))
    c.downstream_phase_of[lane] = cfg.require("sim.phase_of." + lane);

  c.validate();
  return c;
}

inline std::string sim_config_to_text(const SimConfig& c) {
  std::ostringstream out;
  out << "# corridor configuration: site layout, signal timing, simulation\n";
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      s += v[i];
    }
    return s;
  };
  out << "site.upstream_lanes = " << join(c.layout.upstream_lanes) << "\n";
  out << "site.downstream_lanes = " << join(c.layout.downstream_lanes) << "\n";
  std::vector<std::string> unmonitored;
  for (const auto& [lane, flag] : c.layout.monitored)
    if (!flag) unmonitored.push_back(lane);
  if (!unmonitored.empty())
    out << "site.unmonitored = " << join(unmonitored) << "\n";
  out << "site.link_length = " << format_general(c.layout.link_length) << "\n";
  out << "site.free_flow_speed = " << format_general(c.layout.free_flow_speed) << "\n\n";

  auto dump_signal = [&](const std::string& prefix, const SignalTiming& s) {
    out << prefix << ".cycle = " << format_general(s.cycle_length) << "\n";
    out << prefix << ".origin = " << format_general(s.cycle_origin) << "\n";
    for (const auto& p : s.phases)
      out << prefix << ".phase = " << p.label << ":" << format_general(p.start)
          << ":" << format_general(p.end) << "\n";
  };
  dump_signal("signal.up", c.upstream_signal);
  out << "\n";
  dump_signal("signal.down", c.downstream_signal);
  out << "\n";

  out << "sim.seed = " << c.seed << "\n";
  out << "sim.duration = " << format_general(c.duration) << "\n";
  out << "sim.travel_time_median = " << format_general(c.travel_time_median) << "\n";
  out << "sim.travel_time_sigma = " << format_general(c.travel_time_sigma) << "\n";
  out << "sim.midblock_merge_rate = " << format_general(c.midblock_merge_rate) << "\n";
  out << "sim.recognition_rate.up = " << format_general(c.upstream_recognition) << "\n";
  out << "sim.recognition_rate.down = " << format_general(c.downstream_recognition)
      << "\n";
  out << "sim.saturation_headway = " << format_general(c.saturation_headway) << "\n";
  for (const auto& [lane, segs] : c.demand) {
    out << "sim.demand." << lane << " = ";
    for (std::size_t i = 0; i < segs.size(); ++i) {
      if (i) out << ",";
      out << segs[i].phase << ":" << format_general(segs[i].rate_vph);
    }
    out << "\n";
  }
  auto dump_row = [&](const std::string& key, const std::vector<double>& row) {
    out << key << " = ";
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ",";
      out << format_general(row[i]);
    }
    out << "\n";
  };
  for (const auto& [lane, row] : c.lane_choice) dump_row("sim.choice." + lane, row);
  for (const auto& [phase, rows] : c.lane_choice_by_phase)
    for (const auto& [lane, row] : rows)
      dump_row("sim.choice." + lane + "@" + phase, row);
  if (!c.merge_lane_choice.empty()) dump_row("sim.merge_choice", c.merge_lane_choice);
  for (const auto& [lane, phase] : c.downstream_phase_of)
    out << "sim.phase_of." << lane << " = " << phase << "\n";
  return out.str();
}

}  // namespace acr
