#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "acr/csv.hpp"

namespace acr {

/// One vehicle detection. `recognized = false` models a plate-read failure:
/// the departure event still counts toward cumulative curves, but the record
/// cannot participate in plate matching.
struct LprRecord {
  std::string plate;
  std::string lane;       // site-qualified, e.g. "up:TH1", "down:LT"
  double timestamp = 0.0; // seconds since epoch start
  bool recognized = true;
};

/// Canonical record ordering: timestamp, then plate id. Ties on timestamp are
/// broken by plate so cumulative indexing is deterministic.
inline bool record_before(const LprRecord& a, const LprRecord& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  return a.plate < b.plate;
}

inline std::map<std::string, std::vector<LprRecord>> group_by_lane(
    const std::vector<LprRecord>& records) {
  std::map<std::string, std::vector<LprRecord>> out;
  for (const auto& r : records) out[r.lane].push_back(r);
  return out;
}

inline void write_lpr_csv(const std::string& path,
                          const std::vector<LprRecord>& records) {
  auto out = open_output(path);
  out << "plate,lane,timestamp,recognized\n";
  for (const auto& r : records) {
    out << r.plate << ',' << r.lane << ',' << format_fixed(r.timestamp, 6)
        << ',' << (r.recognized ? 1 : 0) << '\n';
  }
}

inline std::vector<LprRecord> read_lpr_csv(const std::string& path) {
  CsvTable table = read_csv(path);
  const std::vector<std::string> expected = {"plate", "lane", "timestamp",
                                             "recognized"};
  if (table.header != expected)
    throw std::runtime_error("LPR CSV " + path +
                             ": expected header plate,lane,timestamp,recognized");
  std::vector<LprRecord> records;
  records.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    if (row.size() != 4)
      throw std::runtime_error("LPR CSV " + path + ": malformed row");
    LprRecord r;
    r.plate = row[0];
    r.lane = row[1];
    r.timestamp = parse_double(row[2], "timestamp");
    if (r.timestamp < 0.0)
      throw std::runtime_error("LPR CSV " + path + ": negative timestamp");
    r.recognized = parse_long(row[3], "recognized") != 0;
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace acr
