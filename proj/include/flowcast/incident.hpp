#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "flowcast/data.hpp"
#include "flowcast/matrix.hpp"

namespace flowcast {

// Multiplicative severity factors for one crash. The combined score is the
// exact product of the five factors.
struct CrashSeverity {
  std::size_t station = 0;  // nearest-station index
  int hour = 0;             // 0..23, from the crash timestamp
  double clearance_factor = 0.0;   // C_n over global mean clearance
  double overspeed_factor = 0.0;   // normalized nonnegative overspeed ratio
  double weather_mult = 0.0;       // conditional-mean clearance ratio
  double fclass_mult = 0.0;
  double workzone_mult = 0.0;
  double severity = 0.0;
};

struct SeverityStats {
  double mean_clearance = 0.0;   // global mean clearance
  double mean_overspeed = 0.0;   // global mean of the raw overspeed ratio
  std::map<int, double> clearance_by_weather;
  std::map<int, double> clearance_by_fclass;
  std::map<int, double> clearance_by_workzone;
};

struct SeverityTable {
  std::vector<CrashSeverity> rows;
  SeverityStats stats;
};

// Nearest station by haversine distance; ties go to the lowest index.
std::size_t map_crash_to_station(const CrashRecord& crash,
                                 const StationNetwork& net);

// Raw nonnegative overspeed ratio max(0, (v - v_lim) / (v_lim + eps)).
double overspeed_ratio(double vehicle_speed, double speed_limit);

// Two-pass factor computation: global/conditional clearance statistics
// first, then per-crash factors and the combined product.
SeverityTable severity_factors(const CrashTable& crashes,
                               const StationNetwork& net);

double combined_severity(double clearance_factor, double overspeed_factor,
                         double weather_mult, double fclass_mult,
                         double workzone_mult);

// Hour-conditioned accumulated severity per station, with a standardized
// companion (global mean/population std over all 24xN cells).
struct RiskField {
  Matrix node_risk;      // 24 x N
  Matrix node_risk_std;  // 24 x N
  double mu_r = 0.0;
  double sigma_r = 0.0;

  // Pairwise projection: sum of the standardized endpoint risks.
  double edge_risk(int hour, std::size_t i, std::size_t j) const {
    return node_risk_std(static_cast<std::size_t>(hour), i) +
           node_risk_std(static_cast<std::size_t>(hour), j);
  }
};

RiskField node_risk(const SeverityTable& severity, std::size_t n_stations);

// Standardization core: global mean and population std over every cell of
// the given field (zeros included).
RiskField standardize_risk(Matrix risk);

// All-zero field for the no-crash pipeline path.
RiskField zero_risk(std::size_t n_stations);

// Audit export: one row per crash with all factors and the combined score.
void export_severity_csv(const SeverityTable& severity,
                         const StationNetwork& net, const std::string& path);

}  // namespace flowcast
