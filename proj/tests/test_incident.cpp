#include "doctest.h"

#include <cmath>

#include "flowcast/common.hpp"
#include "flowcast/incident.hpp"

using namespace flowcast;

namespace {

StationNetwork two_station_net() {
  Station a, b;
  a.id = "A";
  a.lat = 40.0;
  a.lon = -83.0;
  a.kind = StationKind::CCS;
  b.id = "B";
  b.lat = 40.5;
  b.lon = -83.0;
  b.kind = StationKind::CCS;
  return make_network({a, b});
}

CrashRecord crash_at(double lat, double lon, int hour = 10) {
  CrashRecord r;
  r.when = (days_from_civil(2023, 6, 1) * 1440) + hour * 60;
  r.lat = lat;
  r.lon = lon;
  r.weather = 1;
  r.functional_class = 1;
  r.vehicle_speed = 50.0;
  r.speed_limit = 65.0;
  r.work_zone = 0;
  r.clearance_min = 60.0;
  return r;
}

}  // namespace

TEST_SUITE_BEGIN("incident");

TEST_CASE("crash at a station maps to that station") {
  auto net = two_station_net();
  CHECK(map_crash_to_station(crash_at(40.0, -83.0), net) == 0);
  CHECK(map_crash_to_station(crash_at(40.5, -83.0), net) == 1);
}

TEST_CASE("nearer station wins") {
  auto net = two_station_net();
  // ~7 miles from A, ~28 miles from B.
  CHECK(map_crash_to_station(crash_at(40.1, -83.0), net) == 0);
}

TEST_CASE("equidistant crash breaks the tie toward the lower index") {
  auto net = two_station_net();
  CHECK(map_crash_to_station(crash_at(40.25, -83.0), net) == 0);
}

TEST_CASE("overspeed ratio from the sample dataset rows") {
  // Row with v=75 above a 70 limit.
  CHECK(overspeed_ratio(75.0, 70.0) == doctest::Approx(5.0 / 70.0).epsilon(1e-6));
  // Row with v=50 below a 65 limit clamps at zero.
  CHECK(overspeed_ratio(50.0, 65.0) == 0.0);
}

TEST_CASE("single crash sits at its own mean everywhere") {
  auto net = two_station_net();
  CrashTable crashes;
  crashes.records.push_back(crash_at(40.0, -83.0));
  auto severity = severity_factors(crashes, net);
  REQUIRE(severity.rows.size() == 1);
  const auto& s = severity.rows[0];
  CHECK(s.clearance_factor == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.overspeed_factor == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.weather_mult == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.fclass_mult == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.workzone_mult == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.severity == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("combined severity is the exact factor product") {
  CHECK(combined_severity(1, 1, 1, 1, 1) == 1.0);
  CHECK(combined_severity(2.0, 1.0, 1.5, 1.0, 1.0) == doctest::Approx(3.0));
  CHECK(combined_severity(2.0, 0.0, 1.5, 1.0, 3.0) == 0.0);
}

TEST_CASE("stored severity reconstructs from stored factors") {
  auto net = two_station_net();
  CrashTable crashes;
  for (int i = 0; i < 6; ++i) {
    auto r = crash_at(40.0 + 0.1 * i, -83.0, 3 + i);
    r.clearance_min = 20.0 + 15.0 * i;
    r.vehicle_speed = 60.0 + 5.0 * i;
    r.weather = i % 2 ? 2 : 1;
    r.work_zone = i % 3 == 0 ? 1 : 0;
    crashes.records.push_back(r);
  }
  auto severity = severity_factors(crashes, net);
  for (const auto& s : severity.rows)
    CHECK(s.severity ==
          combined_severity(s.clearance_factor, s.overspeed_factor,
                            s.weather_mult, s.fclass_mult, s.workzone_mult));
}

TEST_CASE("categorical multipliers equal conditional clearance ratios") {
  auto net = two_station_net();
  CrashTable crashes;
  auto r1 = crash_at(40.0, -83.0);
  r1.weather = 1;
  r1.clearance_min = 30.0;
  auto r2 = crash_at(40.0, -83.0);
  r2.weather = 4;
  r2.clearance_min = 90.0;
  crashes.records = {r1, r2};
  auto severity = severity_factors(crashes, net);
  // Global mean clearance 60; weather-4 conditional mean 90 -> 1.5.
  CHECK(severity.rows[1].weather_mult == doctest::Approx(1.5).epsilon(1e-6));
  CHECK(severity.rows[0].weather_mult == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("raising clearance never lowers severity") {
  auto net = two_station_net();
  CrashTable crashes;
  for (int i = 0; i < 5; ++i) {
    auto r = crash_at(40.0, -83.0);
    r.clearance_min = 30.0 + 10.0 * i;
    r.vehicle_speed = 70.0;
    crashes.records.push_back(r);
  }
  auto base = severity_factors(crashes, net);
  // Same stats applied to a longer clearance: c_n scales linearly.
  const auto& s = base.rows[2];
  const double higher =
      combined_severity((crashes.records[2].clearance_min + 25.0) /
                            (base.stats.mean_clearance + kEps),
                        s.overspeed_factor, s.weather_mult, s.fclass_mult,
                        s.workzone_mult);
  CHECK(higher >= s.severity);
}

TEST_CASE("empty crash table is rejected") {
  auto net = two_station_net();
  CrashTable crashes;
  CHECK_THROWS_AS(severity_factors(crashes, net), ValidationError);
}

TEST_CASE("node risk accumulates severities per cell") {
  auto net = two_station_net();
  SeverityTable severity;
  CrashSeverity a;
  a.station = 0;
  a.hour = 8;
  a.severity = 1.0;
  CrashSeverity b = a;
  b.severity = 0.5;
  severity.rows = {a, b};
  auto field = node_risk(severity, net.size());
  CHECK(field.node_risk(8, 0) == doctest::Approx(1.5));
  CHECK(field.node_risk(8, 1) == 0.0);
}

TEST_CASE("standardization of a three-value toy field") {
  // Cells {0, 2, 4}: mean 2, population std sqrt(8/3) ~ 1.63299,
  // standardized {-1.2247, 0, 1.2247}.
  Matrix risk(3, 1);
  risk(1, 0) = 2.0;
  risk(2, 0) = 4.0;
  auto field = standardize_risk(risk);
  CHECK(field.node_risk_std(0, 0) == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(field.node_risk_std(1, 0) == doctest::Approx(0.0));
  CHECK(field.node_risk_std(2, 0) == doctest::Approx(1.2247).epsilon(1e-4));
}

TEST_CASE("no crashes standardizes to zero everywhere") {
  auto field = zero_risk(3);
  for (int h = 0; h < 24; ++h)
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(field.node_risk_std(h, i) == doctest::Approx(0.0));
}

TEST_CASE("standardized field has mean zero and unit-ish std") {
  auto net = two_station_net();
  SeverityTable severity;
  for (int h = 0; h < 24; ++h) {
    CrashSeverity s;
    s.station = static_cast<std::size_t>(h % 2);
    s.hour = h;
    s.severity = 0.3 + 0.1 * h;
    severity.rows.push_back(s);
  }
  auto field = node_risk(severity, net.size());
  double sum = 0.0, sumsq = 0.0;
  const double cells = 24.0 * 2.0;
  for (int h = 0; h < 24; ++h)
    for (std::size_t i = 0; i < 2; ++i) {
      sum += field.node_risk_std(h, i);
      sumsq += field.node_risk_std(h, i) * field.node_risk_std(h, i);
    }
  CHECK(sum / cells == doctest::Approx(0.0).epsilon(1e-9));
  // Population std is sigma/(sigma+eps), within 1e-6 of 1 for sigma >> eps.
  CHECK(std::sqrt(sumsq / cells) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("edge risk sums endpoints symmetrically") {
  SeverityTable severity;
  CrashSeverity s;
  s.station = 0;
  s.hour = 5;
  s.severity = 2.0;
  severity.rows.push_back(s);
  auto field = node_risk(severity, 3);
  for (int h = 0; h < 24; ++h)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        CHECK(field.edge_risk(h, i, j) == field.edge_risk(h, j, i));
  CHECK(field.edge_risk(5, 0, 0) ==
        doctest::Approx(2.0 * field.node_risk_std(5, 0)));
  // Direct sum check.
  CHECK(field.edge_risk(5, 0, 1) ==
        doctest::Approx(field.node_risk_std(5, 0) + field.node_risk_std(5, 1)));
}

TEST_SUITE_END();
