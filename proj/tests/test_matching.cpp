#include <catch2/catch_amalgamated.hpp>

#include "acr/matching.hpp"

using namespace acr;

namespace {

std::map<std::string, CumulativeCurve> curves_for(
    const std::vector<LprRecord>& downstream) {
  return build_lane_curves(downstream);
}

}  // namespace

TEST_CASE("single plate on both sides matches", "[matching]") {
  std::vector<LprRecord> up = {{"P1", "up:TH1", 10.0, true}};
  std::vector<LprRecord> down = {{"PX", "down:TH", 20.0, true},
                                 {"P2", "down:TH", 30.0, false},
                                 {"P1", "down:TH", 40.0, true}};
  auto pairs = match_plates(up, down, curves_for(down));
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].plate == "P1");
  CHECK(pairs[0].t_upstream == 10.0);
  CHECK(pairs[0].t_downstream == 40.0);
  CHECK(pairs[0].upstream_lane == "up:TH1");
  CHECK(pairs[0].downstream_lane == "down:TH");
  // unrecognized and unmatched records still advance the index
  CHECK(pairs[0].anchor == 3.0);
}

TEST_CASE("no overlap yields no pairs", "[matching]") {
  std::vector<LprRecord> up = {{"P1", "up:TH1", 10.0, true}};
  std::vector<LprRecord> down;
  auto pairs = match_plates(up, down, {});
  CHECK(pairs.empty());
}

TEST_CASE("plate seen downstream first is rejected and tallied", "[matching]") {
  std::vector<LprRecord> up = {{"P1", "up:TH1", 50.0, true}};
  std::vector<LprRecord> down = {{"P1", "down:TH", 40.0, true}};
  MatchDiagnostics diag;
  auto pairs = match_plates(up, down, curves_for(down), &diag);
  CHECK(pairs.empty());
  CHECK(diag.rejected_out_of_order == 1);
}

TEST_CASE("duplicate plates keep the earliest and are tallied", "[matching]") {
  std::vector<LprRecord> up = {{"P1", "up:TH1", 10.0, true},
                               {"P1", "up:TH1", 90.0, true}};
  std::vector<LprRecord> down = {{"P1", "down:TH", 40.0, true},
                                 {"P1", "down:TH", 140.0, true}};
  MatchDiagnostics diag;
  auto pairs = match_plates(up, down, curves_for(down), &diag);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].t_upstream == 10.0);
  CHECK(pairs[0].t_downstream == 40.0);
  CHECK(diag.duplicate_upstream == 1);
  CHECK(diag.duplicate_downstream == 1);
}

TEST_CASE("output is sorted by downstream lane then t_m", "[matching]") {
  std::vector<LprRecord> up = {{"P1", "up:TH1", 30.0, true},
                               {"P2", "up:TH1", 10.0, true},
                               {"P3", "up:TH2", 20.0, true}};
  std::vector<LprRecord> down = {{"P1", "down:B", 130.0, true},
                                 {"P2", "down:A", 110.0, true},
                                 {"P3", "down:A", 120.0, true}};
  auto pairs = match_plates(up, down, curves_for(down));
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0].plate == "P2");
  CHECK(pairs[1].plate == "P3");
  CHECK(pairs[2].plate == "P1");
}

TEST_CASE("curve disagreement with records fails loudly", "[matching]") {
  std::vector<LprRecord> up = {{"P1", "up:TH1", 10.0, true}};
  std::vector<LprRecord> down = {{"P1", "down:TH", 40.0, true},
                                 {"P2", "down:TH", 50.0, true}};
  CumulativeCurve truncated;
  truncated.points = {{40.0, 1.0}};
  std::map<std::string, CumulativeCurve> curves = {{"down:TH", truncated}};
  CHECK_THROWS_AS(match_plates(up, down, curves), std::invalid_argument);
}
