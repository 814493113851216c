#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "acr/pipeline.hpp"
#include "acr/reconstruct.hpp"

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
  s.phases = {{"TH", 0.0, 120.0}};
  return s;
}

// Linear model on inputs [ds..., t_cycle, delta] with hand-set weights; the
// aleatoric head is a constant set through its bias.
BaclModel linear_model(std::size_t n_ds, double w_ds, double w_tc, double w_delta,
                       double bias_mean, double bias_sigma_raw, BaclMode mode,
                       double rho = -40.0) {
  Hyperparams hp;
  hp.hidden = {};
  BaclModel m;
  Rng rng(1);
  m.initialize(static_cast<int>(n_ds) + 2, hp, rng);
  m.mode = mode;
  m.feature_mode = FeatureMode::per_lane;
  auto& l = m.layers[0];
  std::fill(l.w_mu.begin(), l.w_mu.end(), 0.0);
  for (std::size_t i = 0; i < n_ds; ++i) l.w_mu[i * 2] = w_ds;
  l.w_mu[n_ds * 2] = w_tc;
  l.w_mu[(n_ds + 1) * 2] = w_delta;
  l.b_mu = {bias_mean, bias_sigma_raw};
  std::fill(l.w_rho.begin(), l.w_rho.end(), rho);
  std::fill(l.b_rho.begin(), l.b_rho.end(), rho);
  return m;
}

MatchedVehiclePair anchor_at(double t, double index,
                             const std::string& lane = "down:TH") {
  MatchedVehiclePair p;
  p.plate = "P" + std::to_string(static_cast<long>(t * 1000));
  p.upstream_lane = "up:TH1";
  p.downstream_lane = lane;
  p.t_upstream = t;
  p.t_downstream = t + 70.0;
  p.anchor = index;
  return p;
}

std::map<std::string, CumulativeCurve> upstream_events(
    const std::vector<double>& times) {
  std::vector<LprRecord> recs;
  for (std::size_t i = 0; i < times.size(); ++i)
    recs.push_back({"U" + std::to_string(i), "up:TH1", times[i], true});
  std::map<std::string, CumulativeCurve> out;
  out["up:TH1"] = build_departure_curve(recs);
  return out;
}

}  // namespace

TEST_CASE("boundary factor rescales predictions onto the anchors", "[reconstruct]") {
  auto layout = one_feeder_layout();
  auto model = linear_model(1, 0.0, 0.0, 0.05, 0.0, 0.0, BaclMode::deterministic);
  std::vector<MatchedVehiclePair> anchors = {anchor_at(0.0, 10.0),
                                             anchor_at(100.0, 14.0)};
  auto rec = historical_acr("down:TH", anchors, {}, model, layout, cycle_120(),
                            25.0, 7, 1);
  // predicted accumulation is 0.05 * delta: 5 at the right end, lambda = 0.8
  REQUIRE(rec.points.size() == 5);
  CHECK(rec.points[0].mean == 10.0);
  CHECK(rec.points[1].mean == Catch::Approx(11.0).margin(1e-12));  // 0.8 * 1.25
  CHECK(rec.points[2].mean == Catch::Approx(12.0).margin(1e-12));  // 0.8 * 2.50
  CHECK(rec.points[3].mean == Catch::Approx(13.0).margin(1e-12));
  CHECK(rec.points[4].mean == Catch::Approx(14.0).margin(1e-9));
  CHECK(rec.fallback_gaps == 0);

  // variance: lambda^2 * taper * sigma_n^2, zero at both anchors
  double sigma = softplus(0.0) + model.hyper.sigma_floor;
  double lambda2 = 0.8 * 0.8;
  CHECK(rec.points[0].var_total() == 0.0);
  CHECK(rec.points[2].var_total() ==
        Catch::Approx(lambda2 * 1.0 * sigma * sigma).margin(1e-12));
  CHECK(rec.points[1].var_total() ==
        Catch::Approx(lambda2 * 0.75 * sigma * sigma).margin(1e-12));
  CHECK(rec.points[4].var_total() == 0.0);
}

TEST_CASE("zero observed arrivals flatten the gap regardless of predictions",
          "[reconstruct]") {
  auto layout = one_feeder_layout();
  auto model = linear_model(1, 0.0, 0.0, 0.2, 1.0, 0.0, BaclMode::deterministic);
  std::vector<MatchedVehiclePair> anchors = {anchor_at(0.0, 10.0),
                                             anchor_at(100.0, 10.0)};
  auto rec = historical_acr("down:TH", anchors, {}, model, layout, cycle_120(),
                            20.0, 7, 1);
  for (const auto& p : rec.points) {
    CHECK(p.mean == 10.0);
    CHECK(p.var_total() == 0.0);  // lambda = 0 pins the whole gap
  }
}

TEST_CASE("a silent model falls back to linear spreading", "[reconstruct]") {
  auto layout = one_feeder_layout();
  auto model = linear_model(1, 0.0, 0.0, 0.0, 0.0, 0.0, BaclMode::deterministic);
  std::vector<MatchedVehiclePair> anchors = {anchor_at(0.0, 10.0),
                                             anchor_at(100.0, 14.0)};
  auto rec = historical_acr("down:TH", anchors, {}, model, layout, cycle_120(),
                            25.0, 7, 1);
  CHECK(rec.fallback_gaps == 1);
  CHECK(rec.points[1].mean == Catch::Approx(11.0));
  CHECK(rec.points[2].mean == Catch::Approx(12.0));
  CHECK(rec.points[4].mean == Catch::Approx(14.0).margin(1e-9));
}

TEST_CASE("projection keeps the curve monotone and within the anchors",
          "[reconstruct]") {
  auto layout = one_feeder_layout();
  // strong weight on early upstream arrivals, negative span weight: the raw
  // prediction overshoots mid-gap and then sags
  auto model = linear_model(1, 2.0, 0.0, -0.05, 0.0, 0.0, BaclMode::deterministic);
  auto curves = upstream_events({5.0, 6.0, 7.0});
  std::vector<MatchedVehiclePair> anchors = {anchor_at(0.0, 10.0),
                                             anchor_at(100.0, 11.0)};
  auto rec = historical_acr("down:TH", anchors, curves, model, layout, cycle_120(),
                            10.0, 7, 1);
  for (std::size_t i = 1; i < rec.points.size(); ++i)
    CHECK(rec.points[i].mean >= rec.points[i - 1].mean);
  for (const auto& p : rec.points) {
    CHECK(p.mean >= 10.0);
    CHECK(p.mean <= 11.0);
  }
  CHECK(rec.points.back().mean == Catch::Approx(11.0).margin(1e-9));
}

TEST_CASE("anchor exactness holds across many synthetic gaps", "[reconstruct]") {
  auto layout = one_feeder_layout();
  auto model = linear_model(1, 0.4, 0.001, 0.03, 0.2, 0.0, BaclMode::deterministic);
  Rng rng(5);
  std::vector<MatchedVehiclePair> anchors;
  double t = 0.0, index = 3.0;
  anchors.push_back(anchor_at(t, index));
  std::vector<double> events;
  for (int m = 0; m < 12; ++m) {
    t += rng.uniform(10.0, 200.0);
    index += std::floor(rng.uniform(0.0, 8.0));
    anchors.push_back(anchor_at(t, index));
    for (int e = 0; e < 5; ++e) events.push_back(rng.uniform(0.0, t));
  }
  auto rec = historical_acr("down:TH", anchors, upstream_events(events), model,
                            layout, cycle_120(), 1.0, 7, 1);
  for (const auto& a : anchors) {
    bool found = false;
    for (const auto& p : rec.points)
      if (p.t == a.t_upstream) {
        CHECK(std::abs(p.mean - a.anchor) <= 1e-9);
        found = true;
      }
    CHECK(found);
  }
  for (std::size_t i = 1; i < rec.points.size(); ++i)
    CHECK(rec.points[i].mean >= rec.points[i - 1].mean);
}

TEST_CASE("historical_acr validates its inputs", "[reconstruct]") {
  auto layout = one_feeder_layout();
  auto model = linear_model(1, 0.0, 0.0, 0.05, 0.0, 0.0, BaclMode::deterministic);
  CHECK_THROWS_AS(historical_acr("down:TH", {anchor_at(0.0, 1.0)}, {}, model,
                                 layout, cycle_120(), 1.0, 7, 1),
                  std::invalid_argument);
  std::vector<MatchedVehiclePair> unsorted = {anchor_at(50.0, 2.0),
                                              anchor_at(0.0, 1.0)};
  CHECK_THROWS_AS(historical_acr("down:TH", unsorted, {}, model, layout,
                                 cycle_120(), 1.0, 7, 1),
                  std::invalid_argument);
}

TEST_CASE("realtime estimates stay at the anchor for a zero span", "[reconstruct]") {
  auto layout = one_feeder_layout();
  auto model =
      linear_model(1, 0.0, 0.0, 0.05, 0.0, 0.0, BaclMode::bayesian, -4.0);
  auto anchor = anchor_at(50.0, 7.0);
  auto rec = realtime_acr("down:TH", anchor, {}, model, layout, cycle_120(),
                          {50.0}, 7, 1000);
  REQUIRE(rec.points.size() == 1);
  CHECK(rec.points[0].mean == Catch::Approx(7.0).margin(0.15));
  CHECK(rec.points[0].var_epistemic > 0.0);
  CHECK_THROWS_AS(realtime_acr("down:TH", anchor, {}, model, layout, cycle_120(),
                               {49.0}, 7, 10),
                  std::invalid_argument);
}

TEST_CASE("realtime estimates are causal", "[reconstruct]") {
  auto layout = one_feeder_layout();
  auto model = linear_model(1, 0.3, 0.0, 0.01, 0.0, 0.0, BaclMode::bayesian, -2.0);
  std::vector<double> all_events;
  for (double t = 5.0; t < 100.0; t += 10.0) all_events.push_back(t);
  std::vector<double> early_events;
  for (double t : all_events)
    if (t <= 50.0) early_events.push_back(t);

  auto anchor = anchor_at(0.0, 3.0);
  std::vector<double> queries = {10.0, 30.0, 50.0};
  auto full = realtime_acr("down:TH", anchor, upstream_events(all_events), model,
                           layout, cycle_120(), queries, 7, 50);
  auto truncated = realtime_acr("down:TH", anchor, upstream_events(early_events),
                                model, layout, cycle_120(), queries, 7, 50);
  REQUIRE(full.points.size() == truncated.points.size());
  for (std::size_t i = 0; i < full.points.size(); ++i) {
    CHECK(full.points[i].mean == truncated.points[i].mean);
    CHECK(full.points[i].var_epistemic == truncated.points[i].var_epistemic);
  }
}

TEST_CASE("uncertainty grows with the estimation span", "[reconstruct]") {
  auto layout = one_feeder_layout();
  auto model = linear_model(1, 0.1, 0.0, 0.02, 0.0, 0.0, BaclMode::bayesian, -2.0);
  auto anchor = anchor_at(0.0, 5.0);
  auto rec = realtime_acr("down:TH", anchor, {}, model, layout, cycle_120(),
                          {30.0, 300.0}, 7, 400);
  CHECK(rec.points[1].var_total() >= rec.points[0].var_total());
}

TEST_CASE("re_anchor bookkeeping", "[reconstruct]") {
  RealtimeState state;
  CHECK(state.warming_up());
  auto a = anchor_at(10.0, 3.0);
  auto b = anchor_at(50.0, 7.0);
  CHECK(re_anchor(state, a));
  CHECK(!state.warming_up());
  CHECK(re_anchor(state, b));
  CHECK(state.anchor->plate == b.plate);
  REQUIRE(state.closed_gaps.size() == 1);
  CHECK(state.closed_gaps[0].first.plate == a.plate);

  SECTION("duplicates are no-ops") {
    CHECK(!re_anchor(state, b));
    CHECK(state.duplicates == 1);
    CHECK(state.closed_gaps.size() == 1);
  }
  SECTION("out-of-order pairs are tallied and ignored") {
    auto old_pair = anchor_at(20.0, 4.0);
    CHECK(!re_anchor(state, old_pair));
    CHECK(state.ignored_out_of_order == 1);
    CHECK(state.anchor->plate == b.plate);
  }
}

TEST_CASE("vehicle count subtracts observed departures", "[reconstruct]") {
  ReconstructedCurve arrivals;
  arrivals.lane = "down:TH";
  arrivals.points = {{0.0, 9.0, 0.0, 0.0}, {10.0, 12.4, 0.3, 0.2}};
  CumulativeCurve departures;
  for (int i = 1; i <= 9; ++i)
    departures.points.push_back({static_cast<double>(i) * 0.5,
                                 static_cast<double>(i)});

  SECTION("arrivals equal departures means an empty lane") {
    auto c = vehicle_count(arrivals, departures, 0.0);
    // at t=0 no departures have happened and arrivals are 9
    CHECK(c.mean == 9.0);
    auto c2 = vehicle_count(arrivals, departures, 4.5);
    CHECK(c2.mean == 0.0);
  }
  SECTION("count is the curve difference with A's variance") {
    auto c = vehicle_count(arrivals, departures, 10.0);
    CHECK(c.mean == Catch::Approx(12.4 - 9.0));
    CHECK(c.variance == Catch::Approx(0.5));
  }
  SECTION("negative raw counts clamp to zero with the raw value kept") {
    ReconstructedCurve low;
    low.points = {{0.0, 3.0, 0.1, 0.0}, {10.0, 5.0, 0.1, 0.0}};
    auto c = vehicle_count(low, departures, 4.5);  // step value is still 3
    CHECK(c.mean == 0.0);
    CHECK(c.raw_mean == Catch::Approx(3.0 - 9.0));
  }
  SECTION("queries outside the domain are rejected") {
    CHECK_THROWS_AS(vehicle_count(arrivals, departures, 11.0),
                    std::invalid_argument);
  }
}

TEST_CASE("streamed re-anchoring reproduces batch reconstruction exactly",
          "[reconstruct]") {
  SimConfig c = default_corridor();
  c.duration = 900.0;
  c.seed = 17;
  auto data = prepare_corridor(c, 0.6, 23);
  auto model = linear_model(c.layout.upstream_lanes.size(), 0.2, 0.0, 0.02, 0.1,
                            0.0, BaclMode::bayesian, -3.0);

  for (const auto& lane : c.layout.downstream_lanes) {
    auto it = data.lane_pairs.find(lane);
    if (it == data.lane_pairs.end() || it->second.size() < 2) continue;

    auto batch = historical_acr(lane, it->second, data.upstream_curves, model,
                                c.layout, c.upstream_signal, 1.0, 99, 30);

    // stream pairs in discovery order, then reconstruct the closed gaps
    auto by_discovery = it->second;
    std::sort(by_discovery.begin(), by_discovery.end(),
              [](const MatchedVehiclePair& a, const MatchedVehiclePair& b) {
                return a.t_downstream < b.t_downstream;
              });
    RealtimeState state;
    for (const auto& p : by_discovery) re_anchor(state, p);
    REQUIRE(state.closed_gaps.size() == it->second.size() - 1);

    std::vector<ReconstructedPoint> streamed;
    bool first_gap = true;
    for (const auto& [left, right] : state.closed_gaps) {
      auto gap_rec =
          historical_acr(lane, {left, right}, data.upstream_curves, model,
                         c.layout, c.upstream_signal, 1.0, 99, 30);
      std::size_t start = first_gap ? 0 : 1;  // later gaps repeat the left anchor
      for (std::size_t i = start; i < gap_rec.points.size(); ++i)
        streamed.push_back(gap_rec.points[i]);
      first_gap = false;
    }
    REQUIRE(streamed.size() == batch.points.size());
    for (std::size_t i = 0; i < streamed.size(); ++i) {
      CHECK(streamed[i].t == batch.points[i].t);
      CHECK(streamed[i].mean == batch.points[i].mean);
      CHECK(streamed[i].var_epistemic == batch.points[i].var_epistemic);
      CHECK(streamed[i].var_aleatoric == batch.points[i].var_aleatoric);
    }
  }
}
