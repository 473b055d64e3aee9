#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowcast/matrix.hpp"
#include "flowcast/time_util.hpp"

namespace flowcast {

enum class StationKind { CCS, NCCS };

struct Station {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  StationKind kind = StationKind::NCCS;
  long long count_total = 0;
};

// Sensor network with per-station data-availability scores. Continuous
// count stations are fully trusted (score 1); sparse stations are scored by
// their observation volume relative to the best-covered sparse station.
struct StationNetwork {
  std::vector<Station> stations;
  std::vector<double> availability;  // per station, in [0,1]
  Matrix avail_mask;                 // N x N, outer product of availability

  std::size_t size() const { return stations.size(); }
  std::size_t index_of(const std::string& id) const;  // throws if unknown
};

// Validates ids/size, computes availability scores and the edge mask.
StationNetwork make_network(std::vector<Station> stations);

StationNetwork load_stations(const std::string& path);
void save_stations(const StationNetwork& net, const std::string& path);

// Dense flow matrix on an equally spaced timestamp grid, one column per
// station in network order.
struct FlowSeries {
  std::vector<Minutes> timestamps;
  Matrix values;  // T x N
  int step_minutes = 60;
};

FlowSeries load_counts(const std::string& path, const StationNetwork& net);
void save_counts(const FlowSeries& flows, const StationNetwork& net,
                 const std::string& path);

struct CrashRecord {
  Minutes when = 0;
  int weather = 1;          // Table-style categorical code
  double lat = 0.0;
  double lon = 0.0;
  int functional_class = 1;
  double vehicle_speed = 0.0;  // mph
  double speed_limit = 0.0;    // mph
  int work_zone = 0;           // 0/1
  double clearance_min = 0.0;
};

struct CrashTable {
  std::vector<CrashRecord> records;
  std::size_t dropped_rows = 0;  // rows discarded for nonpositive clearance
};

CrashTable load_crashes(const std::string& path);
void save_crashes(const CrashTable& crashes, const std::string& path);

// Synthetic benchmark generator standing in for real count/crash feeds.
// Flow = station base level + double-peak daily profile scaled by a
// day-level AR(1) amplitude + step-level AR(1) dynamics (one network-wide
// component plus a per-station one) + per-reading noise. The AR terms carry
// the structure a window-reading forecaster can exploit and per-hour means
// cannot.
struct SyntheticConfig {
  int n_stations = 10;
  int days = 60;
  int step_minutes = 60;
  double ccs_fraction = 0.7;
  double base_flow = 120.0;
  double peak_amplitude = 200.0;
  double noise_sigma = 16.0;
  double day_amp_phi = 0.35;   // AR(1) coefficient of the daily amplitude
  double day_amp_sigma = 0.06; // AR(1) innovation std (log scale)
  double weekly_amp = 1.8;     // strength of the deterministic weekday pattern
  double hour_ar_phi = 0.65;   // step-level AR(1) coefficient
  double hour_ar_sigma = 12.0; // combined step-level innovation std
  double crash_rate = 0.02;    // expected crashes per station-hour at mean flow
};

struct SyntheticData {
  StationNetwork net;
  FlowSeries flows;
  CrashTable crashes;
};

SyntheticData generate_synthetic(const SyntheticConfig& cfg,
                                 std::uint64_t seed);

}  // namespace flowcast
