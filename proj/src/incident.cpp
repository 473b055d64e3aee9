#include "flowcast/incident.hpp"

#include <cmath>

#include "flowcast/common.hpp"
#include "flowcast/csv.hpp"
#include "flowcast/geo.hpp"

namespace flowcast {

std::size_t map_crash_to_station(const CrashRecord& crash,
                                 const StationNetwork& net) {
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < net.size(); ++i) {
    const double d = haversine_miles(crash.lat, crash.lon, net.stations[i].lat,
                                     net.stations[i].lon);
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return best;
}

double overspeed_ratio(double vehicle_speed, double speed_limit) {
  return std::max(0.0, (vehicle_speed - speed_limit) / (speed_limit + kEps));
}

double combined_severity(double clearance_factor, double overspeed_factor,
                         double weather_mult, double fclass_mult,
                         double workzone_mult) {
  return clearance_factor * overspeed_factor * weather_mult * fclass_mult *
         workzone_mult;
}

SeverityTable severity_factors(const CrashTable& crashes,
                               const StationNetwork& net) {
  if (crashes.records.empty())
    throw ValidationError("severity_factors: empty crash table");

  // Pass 1: global and conditional clearance means, global overspeed mean.
  SeverityStats stats;
  std::map<int, std::pair<double, std::size_t>> by_w, by_f, by_z;
  double clearance_sum = 0.0, overspeed_sum = 0.0;
  for (const auto& r : crashes.records) {
    clearance_sum += r.clearance_min;
    overspeed_sum += overspeed_ratio(r.vehicle_speed, r.speed_limit);
    auto& w = by_w[r.weather];
    w.first += r.clearance_min;
    ++w.second;
    auto& f = by_f[r.functional_class];
    f.first += r.clearance_min;
    ++f.second;
    auto& z = by_z[r.work_zone];
    z.first += r.clearance_min;
    ++z.second;
  }
  const double count = static_cast<double>(crashes.records.size());
  stats.mean_clearance = clearance_sum / count;
  stats.mean_overspeed = overspeed_sum / count;
  for (const auto& [k, v] : by_w)
    stats.clearance_by_weather[k] = v.first / static_cast<double>(v.second);
  for (const auto& [k, v] : by_f)
    stats.clearance_by_fclass[k] = v.first / static_cast<double>(v.second);
  for (const auto& [k, v] : by_z)
    stats.clearance_by_workzone[k] = v.first / static_cast<double>(v.second);

  // Unseen category at query time gets a neutral multiplier.
  const auto mult = [&](const std::map<int, double>& means, int key) {
    const auto it = means.find(key);
    return it == means.end() ? 1.0
                             : it->second / (stats.mean_clearance + kEps);
  };

  // Pass 2: per-crash factors.
  SeverityTable table;
  table.stats = stats;
  table.rows.reserve(crashes.records.size());
  for (const auto& r : crashes.records) {
    CrashSeverity s;
    s.station = map_crash_to_station(r, net);
    s.hour = hour_of_day(r.when);
    s.clearance_factor = r.clearance_min / (stats.mean_clearance + kEps);
    const double raw = overspeed_ratio(r.vehicle_speed, r.speed_limit);
    s.overspeed_factor =
        stats.mean_overspeed > 0.0 ? raw / (stats.mean_overspeed + kEps) : 1.0;
    s.weather_mult = mult(stats.clearance_by_weather, r.weather);
    s.fclass_mult = mult(stats.clearance_by_fclass, r.functional_class);
    s.workzone_mult = mult(stats.clearance_by_workzone, r.work_zone);
    s.severity = combined_severity(s.clearance_factor, s.overspeed_factor,
                                   s.weather_mult, s.fclass_mult,
                                   s.workzone_mult);
    table.rows.push_back(s);
  }
  return table;
}

RiskField standardize_risk(Matrix risk) {
  RiskField field;
  const std::size_t cells = risk.size();
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t i = 0; i < risk.rows(); ++i)
    for (std::size_t j = 0; j < risk.cols(); ++j) {
      sum += risk(i, j);
      sumsq += risk(i, j) * risk(i, j);
    }
  field.mu_r = sum / static_cast<double>(cells);
  const double var = std::max(
      0.0, sumsq / static_cast<double>(cells) - field.mu_r * field.mu_r);
  field.sigma_r = std::sqrt(var);

  field.node_risk_std = Matrix(risk.rows(), risk.cols());
  for (std::size_t i = 0; i < risk.rows(); ++i)
    for (std::size_t j = 0; j < risk.cols(); ++j)
      field.node_risk_std(i, j) =
          (risk(i, j) - field.mu_r) / (field.sigma_r + kEps);
  field.node_risk = std::move(risk);
  return field;
}

RiskField node_risk(const SeverityTable& severity, std::size_t n_stations) {
  Matrix risk(24, n_stations);
  for (const auto& s : severity.rows) {
    if (s.station >= n_stations)
      throw ValidationError("node_risk: station index out of range");
    risk(static_cast<std::size_t>(s.hour), s.station) += s.severity;
  }
  return standardize_risk(std::move(risk));
}

RiskField zero_risk(std::size_t n_stations) {
  return standardize_risk(Matrix(24, n_stations));
}

void export_severity_csv(const SeverityTable& severity,
                         const StationNetwork& net, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(severity.rows.size());
  for (const auto& s : severity.rows)
    rows.push_back({net.stations[s.station].id, std::to_string(s.hour),
                    format_double(s.clearance_factor),
                    format_double(s.overspeed_factor),
                    format_double(s.weather_mult), format_double(s.fclass_mult),
                    format_double(s.workzone_mult), format_double(s.severity)});
  write_csv(path,
            {"station", "hour", "clearance_factor", "overspeed_factor",
             "weather_mult", "fclass_mult", "workzone_mult", "severity"},
            rows);
}

}  // namespace flowcast
