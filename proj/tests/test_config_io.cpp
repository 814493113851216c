#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "acr/config.hpp"
#include "acr/lpr.hpp"
#include "acr/simulator.hpp"

using namespace acr;

namespace {

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "acr_test_io";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("key=value parsing handles comments and repeats", "[config_io]") {
  auto cfg = parse_kv_text(
      "# header comment\n"
      "a = 1\n"
      "b = hello world  # trailing comment\n"
      "\n"
      "list = x\n"
      "list = y\n");
  CHECK(cfg.require("a") == "1");
  CHECK(cfg.require("b") == "hello world");
  CHECK(cfg.get_all("list") == std::vector<std::string>{"x", "y"});
  CHECK(!cfg.get("missing").has_value());
  CHECK_THROWS_AS(cfg.require("missing"), std::runtime_error);
  CHECK_THROWS_AS(parse_kv_text("no equals sign"), std::runtime_error);
}

TEST_CASE("default corridor survives a config round trip", "[config_io]") {
  SimConfig original = default_corridor();
  original.seed = 42;
  auto text = sim_config_to_text(original);
  auto restored = sim_config_from_kv(parse_kv_text(text));

  CHECK(restored.layout.upstream_lanes == original.layout.upstream_lanes);
  CHECK(restored.layout.downstream_lanes == original.layout.downstream_lanes);
  CHECK(restored.layout.is_monitored("up:RT") == false);
  CHECK(restored.layout.is_monitored("up:TH1") == true);
  CHECK(restored.upstream_signal.cycle_length == original.upstream_signal.cycle_length);
  CHECK(restored.upstream_signal.phases.size() ==
        original.upstream_signal.phases.size());
  CHECK(restored.lane_choice == original.lane_choice);
  CHECK(restored.merge_lane_choice == original.merge_lane_choice);
  CHECK(restored.downstream_phase_of == original.downstream_phase_of);
  CHECK(restored.seed == original.seed);
  CHECK(restored.duration == original.duration);

  // identical simulations from the restored config
  auto a = simulate(original);
  auto b = simulate(restored);
  REQUIRE(a.truth.vehicles.size() == b.truth.vehicles.size());
  for (std::size_t i = 0; i < a.truth.vehicles.size(); ++i)
    CHECK(a.truth.vehicles[i].depart_time == b.truth.vehicles[i].depart_time);
}

TEST_CASE("config validation rejects malformed corridors", "[config_io]") {
  SECTION("lane choice rows must sum to one") {
    SimConfig c = default_corridor();
    c.lane_choice["up:LT"] = {0.5, 0.2, 0.2};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
  SECTION("demand must name a known phase") {
    SimConfig c = default_corridor();
    c.demand["up:LT"] = {{"NOPE", 100.0}};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
  SECTION("downstream lanes need a discharge phase") {
    SimConfig c = default_corridor();
    c.downstream_phase_of.erase("down:LT");
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
  SECTION("phase windows must stay inside the cycle") {
    SignalTiming s;
    s.cycle_length = 100.0;
    s.phases = {{"A", 10.0, 120.0}};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  }
  SECTION("upstream and downstream lanes must be disjoint") {
    SiteLayout layout;
    layout.upstream_lanes = {"x"};
    layout.downstream_lanes = {"x"};
    layout.link_length = 10.0;
    layout.free_flow_speed = 1.0;
    CHECK_THROWS_AS(layout.validate(), std::invalid_argument);
  }
}

TEST_CASE("LPR CSV round trip preserves records", "[config_io]") {
  std::vector<LprRecord> records = {{"P1", "up:TH1", 12.345678, true},
                                    {"P2", "up:TH1", 13.0, false},
                                    {"", "up:TH2", 14.25, false}};
  auto path = temp_path("records.csv");
  write_lpr_csv(path, records);
  auto restored = read_lpr_csv(path);
  REQUIRE(restored.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(restored[i].plate == records[i].plate);
    CHECK(restored[i].lane == records[i].lane);
    CHECK(restored[i].timestamp == Catch::Approx(records[i].timestamp).margin(1e-6));
    CHECK(restored[i].recognized == records[i].recognized);
  }

  SECTION("wrong header is rejected") {
    auto bad = temp_path("bad.csv");
    auto out = open_output(bad);
    out << "plate,lane,time\nP1,up:TH1,1.0\n";
    out.close();
    CHECK_THROWS_AS(read_lpr_csv(bad), std::runtime_error);
  }
}

TEST_CASE("ground truth CSV round trip rebuilds arrival curves", "[config_io]") {
  SimConfig c = default_corridor();
  c.duration = 300.0;
  c.seed = 9;
  auto out = simulate(c);
  auto path = temp_path("truth.csv");
  write_ground_truth_csv(path, out.truth);
  auto restored = read_ground_truth_csv(path, c.layout);
  REQUIRE(restored.vehicles.size() == out.truth.vehicles.size());
  CHECK(restored.merge_count() == out.truth.merge_count());
  for (const auto& [lane, curve] : out.truth.true_arrivals) {
    const auto& rc = restored.true_arrivals.at(lane);
    REQUIRE(rc.points.size() == curve.points.size());
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
      CHECK(rc.points[i].t == Catch::Approx(curve.points[i].t).margin(1e-6));
      CHECK(rc.points[i].value == curve.points[i].value);
    }
  }
}
