#include <catch2/catch_amalgamated.hpp>

#include "acr/features.hpp"
#include "acr/pipeline.hpp"
#include "acr/simulator.hpp"

using namespace acr;

namespace {

SiteLayout one_feeder_layout() {
  SiteLayout layout;
  layout.upstream_lanes = {"up:TH1"};
  layout.downstream_lanes = {"down:TH"};
  layout.link_length = 500.0;
  layout.free_flow_speed = 10.0;
  return layout;
}

SignalTiming cycle_120() {
  SignalTiming s;
  s.cycle_length = 120.0;
  s.cycle_origin = 0.0;
  s.phases = {{"TH", 0.0, 120.0}};
  return s;
}

MatchedVehiclePair pair_at(double t_m, double anchor,
                           const std::string& lane = "down:TH") {
  MatchedVehiclePair p;
  p.plate = "P" + std::to_string(static_cast<int>(anchor));
  p.upstream_lane = "up:TH1";
  p.downstream_lane = lane;
  p.t_upstream = t_m;
  p.t_downstream = t_m + 80.0;
  p.anchor = anchor;
  return p;
}

std::map<std::string, CumulativeCurve> upstream_with_departures(
    const std::vector<double>& times) {
  std::vector<LprRecord> recs;
  for (std::size_t i = 0; i < times.size(); ++i)
    recs.push_back({"U" + std::to_string(i), "up:TH1", times[i], true});
  std::map<std::string, CumulativeCurve> out;
  out["up:TH1"] = build_departure_curve(recs);
  return out;
}

}  // namespace

TEST_CASE("training sample from one gap subtracts anchors", "[features]") {
  auto layout = one_feeder_layout();
  auto signal = cycle_120();
  auto curves = upstream_with_departures({105, 110, 120, 130, 150, 160});
  std::vector<MatchedVehiclePair> pairs = {pair_at(100.0, 10.0),
                                           pair_at(160.0, 14.0)};
  auto samples = extract_training_samples(pairs, curves, layout, signal, 0);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].target == 4.0);
  REQUIRE(samples[0].features.upstream_accumulations.size() == 1);
  CHECK(samples[0].features.upstream_accumulations[0] == 6.0);
  CHECK(samples[0].features.span == 60.0);
  CHECK(samples[0].features.time_in_cycle == 100.0);
}

TEST_CASE("equal anchors give a zero target", "[features]") {
  auto layout = one_feeder_layout();
  auto curves = upstream_with_departures({110, 120});
  std::vector<MatchedVehiclePair> pairs = {pair_at(100.0, 7.0), pair_at(150.0, 7.0)};
  auto samples = extract_training_samples(pairs, curves, layout, cycle_120(), 0);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].target == 0.0);
}

TEST_CASE("fewer than two anchors yields empty output and a warning", "[features]") {
  auto layout = one_feeder_layout();
  std::string warning;
  auto samples = extract_training_samples({pair_at(100.0, 3.0)}, {}, layout,
                                          cycle_120(), 3, nullptr, &warning);
  CHECK(samples.empty());
  CHECK(!warning.empty());
}

TEST_CASE("augmentation adds interior samples with truth targets", "[features]") {
  auto layout = one_feeder_layout();
  auto curves = upstream_with_departures({110, 120, 130, 140});
  CumulativeCurve truth;
  truth.points = {{100.0, 10.0}, {115.0, 11.0}, {125.0, 12.0}, {135.0, 13.0},
                  {160.0, 14.0}};
  std::vector<MatchedVehiclePair> pairs = {pair_at(100.0, 10.0),
                                           pair_at(160.0, 14.0)};
  auto samples = extract_training_samples(pairs, curves, layout, cycle_120(), 3,
                                          &truth);
  REQUIRE(samples.size() == 4);  // 1 gap sample + 3 interior
  CHECK(samples[0].target == 4.0);
  // interior times are 115, 130, 145
  CHECK(samples[1].features.span == Catch::Approx(15.0));
  CHECK(samples[1].target == 1.0);  // truth(115) - truth(100)
  CHECK(samples[2].target == 2.0);  // truth(130) - truth(100)
  CHECK(samples[3].target == 3.0);  // truth(145) - truth(100)
}

TEST_CASE("prediction features at the right anchor equal training features",
          "[features]") {
  auto layout = one_feeder_layout();
  auto signal = cycle_120();
  auto curves = upstream_with_departures({105, 130, 150});
  std::vector<MatchedVehiclePair> pairs = {pair_at(100.0, 10.0),
                                           pair_at(160.0, 12.0)};
  auto samples = extract_training_samples(pairs, curves, layout, signal, 0);
  auto fv = build_prediction_features(100.0, 160.0, curves, layout, signal);
  CHECK(fv.upstream_accumulations == samples[0].features.upstream_accumulations);
  CHECK(fv.span == samples[0].features.span);
  CHECK(fv.time_in_cycle == samples[0].features.time_in_cycle);
}

TEST_CASE("zero-span prediction features are all zero accumulations", "[features]") {
  auto layout = one_feeder_layout();
  auto curves = upstream_with_departures({105, 130});
  auto fv = build_prediction_features(100.0, 100.0 + 1e-6, curves, layout,
                                      cycle_120());
  CHECK(fv.upstream_accumulations[0] == 0.0);
  CHECK(fv.span == Catch::Approx(1e-6));
  CHECK_THROWS_AS(build_prediction_features(100.0, 99.0, curves, layout, cycle_120()),
                  std::invalid_argument);
}

TEST_CASE("time in cycle ignores whole cycles", "[features]") {
  auto signal = cycle_120();
  CHECK(signal.time_in_cycle(37.0) == Catch::Approx(37.0));
  CHECK(signal.time_in_cycle(37.0 + 120.0 * 5) == Catch::Approx(37.0));
}

TEST_CASE("normalization round-trips and centers features", "[features]") {
  std::vector<std::vector<double>> rows = {
      {1.0, 5.0, 2.0}, {3.0, 5.0, 8.0}, {5.0, 5.0, 3.0}, {7.0, 5.0, 9.0}};
  auto norm = Normalization::fit(rows);

  SECTION("constant column is shifted but not scaled") {
    CHECK(norm.scale[1] == 1.0);
    CHECK(norm.shift[1] == 5.0);
    CHECK(norm.apply(rows[0])[1] == 0.0);
  }

  SECTION("apply then invert is the identity") {
    for (const auto& r : rows) {
      auto back = norm.invert(norm.apply(r));
      for (std::size_t j = 0; j < r.size(); ++j)
        CHECK(back[j] == Catch::Approx(r[j]).margin(1e-12));
    }
  }

  SECTION("normalized moments are zero mean, unit variance") {
    for (std::size_t j = 0; j < rows[0].size(); ++j) {
      double mean = 0.0, var = 0.0;
      for (const auto& r : rows) mean += norm.apply(r)[j];
      mean /= static_cast<double>(rows.size());
      for (const auto& r : rows) {
        double z = norm.apply(r)[j] - mean;
        var += z * z;
      }
      var /= static_cast<double>(rows.size());
      CHECK(mean == Catch::Approx(0.0).margin(1e-9));
      if (j != 1) CHECK(var == Catch::Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("feature modes reshape the model input", "[features]") {
  FeatureVector fv;
  fv.upstream_accumulations = {2.0, 3.0, 4.0};
  fv.time_in_cycle = 50.0;
  fv.span = 30.0;
  auto full = to_input(fv, FeatureMode::per_lane);
  CHECK(full == std::vector<double>{2.0, 3.0, 4.0, 50.0, 30.0});
  auto agg = to_input(fv, FeatureMode::aggregate);
  CHECK(agg == std::vector<double>{9.0, 50.0, 30.0});
  auto none = to_input(fv, FeatureMode::no_link);
  CHECK(none == std::vector<double>{50.0, 30.0});
  CHECK(input_dim(3, FeatureMode::per_lane) == 5);
  CHECK(input_dim(3, FeatureMode::aggregate) == 3);
  CHECK(input_dim(3, FeatureMode::no_link) == 2);
}

TEST_CASE("empirical lane share diagnostics", "[features]") {
  SECTION("single lane receiving all traffic") {
    TrainingSample s;
    s.features.upstream_accumulations = {5.0};
    s.target = 5.0;
    auto share = empirical_lane_share({s});
    REQUIRE(share.has_value());
    CHECK(*share == 1.0);
  }
  SECTION("no traffic reports missing") {
    TrainingSample s;
    s.features.upstream_accumulations = {0.0};
    s.target = 0.0;
    CHECK(!empirical_lane_share({s}).has_value());
  }
}

TEST_CASE("lane shares recover the simulator's flow-weighted marginals",
          "[features]") {
  SimConfig c = default_corridor();
  c.duration = 5400.0;
  c.seed = 3;
  c.midblock_merge_rate = 0.0;
  c.layout.monitored.clear();  // full observation
  auto data = prepare_corridor(c, 1.0, 99);

  // flow-weighted column marginals of the lane choice matrix
  std::map<std::string, double> flow;
  for (const auto& v : data.sim.truth.vehicles) flow[v.upstream_lane] += 1.0;
  double total = static_cast<double>(data.sim.truth.vehicles.size());
  for (std::size_t j = 0; j < c.layout.downstream_lanes.size(); ++j) {
    const auto& lane = c.layout.downstream_lanes[j];
    double expected = 0.0;
    for (const auto& [up, row] : c.lane_choice)
      expected += flow[up] / total * row[j];
    auto samples = extract_training_samples(data.lane_pairs.at(lane),
                                            data.upstream_curves, c.layout,
                                            c.upstream_signal, 0);
    auto share = empirical_lane_share(samples);
    REQUIRE(share.has_value());
    CHECK(*share == Catch::Approx(expected).margin(0.05));
  }
}

TEST_CASE("targets never exceed observed arrivals plus merges", "[features]") {
  SimConfig c = default_corridor();
  c.duration = 1800.0;
  c.seed = 21;
  c.layout.monitored.clear();  // all feeders observed
  auto data = prepare_corridor(c, 1.0, 4);
  for (const auto& [lane, pairs] : data.lane_pairs) {
    auto samples = extract_training_samples(pairs, data.upstream_curves, c.layout,
                                            c.upstream_signal, 0);
    for (const auto& s : samples) {
      double upstream_total = 0.0;
      for (double v : s.features.upstream_accumulations) upstream_total += v;
      int merges_in_gap = 0;
      for (const auto& v : data.sim.truth.vehicles)
        if (v.merge && v.downstream_lane == lane) ++merges_in_gap;
      CHECK(s.target <= upstream_total + merges_in_gap);
    }
  }
}
