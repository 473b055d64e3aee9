#include "flowcast/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "flowcast/common.hpp"
#include "flowcast/csv.hpp"
#include "flowcast/rng.hpp"

namespace flowcast {

namespace {

bool known_weather_code(int w) {
  return (w >= 1 && w <= 9) || w == 99;
}

bool known_functional_class(int f) { return f >= 1 && f <= 7; }

}  // namespace

std::size_t StationNetwork::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < stations.size(); ++i)
    if (stations[i].id == id) return i;
  throw ValidationError("unknown station id '" + id + "'");
}

StationNetwork make_network(std::vector<Station> stations) {
  if (stations.size() < 2)
    throw ValidationError("station network needs at least 2 stations, got " +
                          std::to_string(stations.size()));
  std::set<std::string> seen;
  for (const auto& s : stations) {
    if (s.count_total < 0)
      throw ValidationError("station '" + s.id + "': negative count_total");
    if (!seen.insert(s.id).second)
      throw ValidationError("duplicate station id '" + s.id + "'");
  }

  StationNetwork net;
  net.stations = std::move(stations);
  const std::size_t n = net.stations.size();

  long long max_nccs = 0;
  for (const auto& s : net.stations)
    if (s.kind == StationKind::NCCS) max_nccs = std::max(max_nccs, s.count_total);

  net.availability.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = net.stations[i];
    if (s.kind == StationKind::CCS) {
      net.availability[i] = 1.0;
    } else {
      // All-zero sparse counts mean no evidence of reliability at all.
      net.availability[i] =
          max_nccs > 0 ? static_cast<double>(s.count_total) / max_nccs : 0.0;
    }
  }

  net.avail_mask = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      net.avail_mask(i, j) = net.availability[i] * net.availability[j];
  return net;
}

StationNetwork load_stations(const std::string& path) {
  const CsvTable t = read_csv(path);
  const std::size_t c_id = t.column("id", path);
  const std::size_t c_lat = t.column("lat", path);
  const std::size_t c_lon = t.column("lon", path);
  const std::size_t c_kind = t.column("kind", path);
  const std::size_t c_count = t.column("count_total", path);

  std::vector<Station> stations;
  stations.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = path + " row " + std::to_string(r + 2);
    if (row.size() != t.header.size())
      throw ValidationError(ctx + ": wrong field count");
    Station s;
    s.id = row[c_id];
    s.lat = parse_double(row[c_lat], ctx);
    s.lon = parse_double(row[c_lon], ctx);
    if (row[c_kind] == "CCS")
      s.kind = StationKind::CCS;
    else if (row[c_kind] == "NCCS")
      s.kind = StationKind::NCCS;
    else
      throw ValidationError(ctx + ": kind must be CCS or NCCS, got '" +
                            row[c_kind] + "'");
    s.count_total = parse_int(row[c_count], ctx);
    stations.push_back(std::move(s));
  }
  return make_network(std::move(stations));
}

void save_stations(const StationNetwork& net, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(net.size());
  for (const auto& s : net.stations)
    rows.push_back({s.id, format_double(s.lat), format_double(s.lon),
                    s.kind == StationKind::CCS ? "CCS" : "NCCS",
                    std::to_string(s.count_total)});
  write_csv(path, {"id", "lat", "lon", "kind", "count_total"}, rows);
}

FlowSeries load_counts(const std::string& path, const StationNetwork& net) {
  const CsvTable t = read_csv(path);
  const std::size_t c_ts = t.column("timestamp", path);
  const std::size_t c_id = t.column("station_id", path);
  const std::size_t c_flow = t.column("flow", path);

  const std::size_t n = net.size();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) index[net.stations[i].id] = i;

  // Rows must arrive in nondecreasing timestamp order.
  std::vector<Minutes> grid;
  std::vector<std::vector<double>> cells;  // parallel with grid, NaN = missing
  Minutes prev = std::numeric_limits<Minutes>::min();
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = path + " row " + std::to_string(r + 2);
    if (row.size() != t.header.size())
      throw ValidationError(ctx + ": wrong field count");
    const auto ts = parse_datetime(row[c_ts]);
    if (!ts) throw ValidationError(ctx + ": unparseable timestamp '" + row[c_ts] + "'");
    if (*ts < prev)
      throw ValidationError(ctx + ": timestamps out of order");
    prev = *ts;
    const auto it = index.find(row[c_id]);
    if (it == index.end())
      throw ValidationError(ctx + ": unknown station id '" + row[c_id] + "'");
    const double flow = parse_double(row[c_flow], ctx);
    if (flow < 0) throw ValidationError(ctx + ": negative flow");
    if (grid.empty() || grid.back() != *ts) {
      grid.push_back(*ts);
      cells.emplace_back(n, std::numeric_limits<double>::quiet_NaN());
    }
    cells.back()[it->second] = flow;
  }
  if (grid.size() < 2)
    throw ValidationError(path + ": need at least 2 timestamps");

  const Minutes step = grid[1] - grid[0];
  if (step <= 0) throw ValidationError(path + ": nonpositive timestamp step");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (grid[i] - grid[i - 1] != step)
      throw ValidationError(path + ": timestamps not equally spaced near " +
                            format_datetime(grid[i]));

  FlowSeries flows;
  flows.timestamps = std::move(grid);
  flows.step_minutes = static_cast<int>(step);
  const std::size_t T = flows.timestamps.size();
  flows.values = Matrix(T, n);

  // Fill: last observation carried forward, leading gaps by column mean.
  for (std::size_t j = 0; j < n; ++j) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < T; ++i) {
      if (!std::isnan(cells[i][j])) {
        sum += cells[i][j];
        ++count;
      }
    }
    if (count == 0)
      throw ValidationError(path + ": station '" + net.stations[j].id +
                            "' has no observations");
    const double mean = sum / count;
    double last = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < T; ++i) {
      if (!std::isnan(cells[i][j]))
        last = cells[i][j];
      flows.values(i, j) = std::isnan(last) ? mean
                          : std::isnan(cells[i][j]) ? last
                                                    : cells[i][j];
    }
  }
  return flows;
}

void save_counts(const FlowSeries& flows, const StationNetwork& net,
                 const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(flows.timestamps.size() * net.size());
  for (std::size_t i = 0; i < flows.timestamps.size(); ++i) {
    const std::string ts = format_datetime(flows.timestamps[i]);
    for (std::size_t j = 0; j < net.size(); ++j)
      rows.push_back({ts, net.stations[j].id, format_double(flows.values(i, j))});
  }
  write_csv(path, {"timestamp", "station_id", "flow"}, rows);
}

CrashTable load_crashes(const std::string& path) {
  const CsvTable t = read_csv(path);
  const std::size_t c_dt = t.column("datetime", path);
  const std::size_t c_w = t.column("weather", path);
  const std::size_t c_lat = t.column("lat", path);
  const std::size_t c_lon = t.column("lon", path);
  const std::size_t c_fc = t.column("functional_class", path);
  const std::size_t c_vs = t.column("vehicle_speed", path);
  const std::size_t c_sl = t.column("speed_limit", path);
  const std::size_t c_wz = t.column("work_zone", path);
  const std::size_t c_cl = t.column("clearance_min", path);

  CrashTable table;
  std::vector<std::string> row_errors;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = path + " row " + std::to_string(r + 2);
    try {
      if (row.size() != t.header.size())
        throw ValidationError(ctx + ": wrong field count");
      CrashRecord rec;
      const auto dt = parse_datetime(row[c_dt]);
      if (!dt)
        throw ValidationError(ctx + ": unparseable datetime '" + row[c_dt] + "'");
      rec.when = *dt;
      rec.weather = static_cast<int>(parse_int(row[c_w], ctx));
      if (!known_weather_code(rec.weather))
        throw ValidationError(ctx + ": unknown weather code " +
                              std::to_string(rec.weather));
      rec.lat = parse_double(row[c_lat], ctx);
      rec.lon = parse_double(row[c_lon], ctx);
      rec.functional_class = static_cast<int>(parse_int(row[c_fc], ctx));
      if (!known_functional_class(rec.functional_class))
        throw ValidationError(ctx + ": unknown functional class " +
                              std::to_string(rec.functional_class));
      rec.vehicle_speed = parse_double(row[c_vs], ctx);
      rec.speed_limit = parse_double(row[c_sl], ctx);
      if (rec.speed_limit <= 0)
        throw ValidationError(ctx + ": speed_limit must be positive");
      if (row[c_wz] == "Y" || row[c_wz] == "1")
        rec.work_zone = 1;
      else if (row[c_wz] == "N" || row[c_wz] == "0")
        rec.work_zone = 0;
      else
        throw ValidationError(ctx + ": work_zone must be Y or N");
      rec.clearance_min = parse_double(row[c_cl], ctx);
      if (rec.clearance_min <= 0) {
        // Clearance feeds denominators downstream; drop rather than clamp.
        ++table.dropped_rows;
        continue;
      }
      table.records.push_back(rec);
    } catch (const ValidationError& e) {
      row_errors.push_back(e.what());
    }
  }
  if (!row_errors.empty()) {
    std::string msg = path + ": " + std::to_string(row_errors.size()) +
                      " bad row(s):";
    for (std::size_t i = 0; i < row_errors.size() && i < 10; ++i)
      msg += "\n  " + row_errors[i];
    throw ValidationError(msg);
  }
  if (table.records.empty())
    throw ValidationError(path + ": no usable crash rows");
  return table;
}

void save_crashes(const CrashTable& crashes, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(crashes.records.size());
  for (const auto& r : crashes.records)
    rows.push_back({format_datetime(r.when), std::to_string(r.weather),
                    format_double(r.lat), format_double(r.lon),
                    std::to_string(r.functional_class),
                    format_double(r.vehicle_speed), format_double(r.speed_limit),
                    r.work_zone ? "Y" : "N", format_double(r.clearance_min)});
  write_csv(path,
            {"datetime", "weather", "lat", "lon", "functional_class",
             "vehicle_speed", "speed_limit", "work_zone", "clearance_min"},
            rows);
}

SyntheticData generate_synthetic(const SyntheticConfig& cfg,
                                 std::uint64_t seed) {
  if (cfg.n_stations < 2)
    throw ValidationError("synthetic: n_stations must be >= 2");
  if (cfg.days < 2) throw ValidationError("synthetic: days must be >= 2");
  if (cfg.step_minutes <= 0 || 1440 % cfg.step_minutes != 0)
    throw ValidationError("synthetic: step_minutes must divide 1440");

  const std::size_t n = static_cast<std::size_t>(cfg.n_stations);

  // Stations along a corridor near 40N 83W, jittered off the line.
  rng::Engine station_rng(rng::stream_seed(seed, {1}));
  std::vector<Station> stations;
  stations.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Station s;
    s.id = "S" + std::to_string(i);
    s.lat = 40.0 + 0.03 * static_cast<double>(i) +
            station_rng.uniform(-0.005, 0.005);
    s.lon = -83.0 + station_rng.uniform(-0.02, 0.02);
    s.kind = station_rng.uniform01() < cfg.ccs_fraction ? StationKind::CCS
                                                        : StationKind::NCCS;
    s.count_total = s.kind == StationKind::CCS
                        ? 100000
                        : 2000 + static_cast<long long>(station_rng.below(8000));
    stations.push_back(std::move(s));
  }
  SyntheticData out;
  out.net = make_network(std::move(stations));

  const int steps_per_day = 1440 / cfg.step_minutes;
  const std::size_t total = static_cast<std::size_t>(cfg.days) * steps_per_day;
  out.flows.step_minutes = cfg.step_minutes;
  out.flows.timestamps.resize(total);
  out.flows.values = Matrix(total, n);

  // 2024-01-01 00:00 start.
  const Minutes t0 = days_from_civil(2024, 1, 1) * 1440;

  // Day-level amplitude: AR(1) in log space, exp keeps it positive.
  rng::Engine amp_rng(rng::stream_seed(seed, {2}));
  std::vector<double> day_amp(static_cast<std::size_t>(cfg.days));
  double a = 0.0;
  for (int d = 0; d < cfg.days; ++d) {
    a = cfg.day_amp_phi * a + cfg.day_amp_sigma * amp_rng.normal();
    day_amp[static_cast<std::size_t>(d)] = std::exp(a);
  }

  // Morning and evening peaks as Gaussian bumps over the hour axis.
  const auto profile = [](double hour) {
    const double am = std::exp(-(hour - 8.0) * (hour - 8.0) / (2.0 * 2.0 * 2.0));
    const double pm = std::exp(-(hour - 17.0) * (hour - 17.0) / (2.0 * 2.5 * 2.5));
    return am + pm;
  };

  // Deterministic weekday demand pattern (Mon..Sun), a structure that
  // per-hour historical means cannot express. Levels are pairwise distinct
  // so the day identity stays inferable from observed flows.
  static const double weekday_shape[7] = {0.02, 0.08, 0.14, 0.20,
                                          0.26, -0.28, -0.42};
  const auto weekly = [&](Minutes ts) {
    const int weekday = static_cast<int>((day_index(ts) + 3) % 7);  // Mon=0
    return 1.0 + cfg.weekly_amp * weekday_shape[weekday];
  };

  // Step-level dynamics: one network-wide AR(1) plus an independent
  // per-station AR(1). The two innovation scales combine to hour_ar_sigma.
  rng::Engine ar_rng(rng::stream_seed(seed, {5}));
  const double ar_scale = cfg.hour_ar_sigma / std::sqrt(2.0);
  double shared_ar = 0.0;
  std::vector<double> station_ar(n, 0.0);

  rng::Engine noise_rng(rng::stream_seed(seed, {3}));
  for (std::size_t t = 0; t < total; ++t) {
    const Minutes ts = t0 + static_cast<Minutes>(t) * cfg.step_minutes;
    out.flows.timestamps[t] = ts;
    const std::size_t day = t / static_cast<std::size_t>(steps_per_day);
    const double hour =
        static_cast<double>(t % static_cast<std::size_t>(steps_per_day)) *
        cfg.step_minutes / 60.0;
    shared_ar = cfg.hour_ar_phi * shared_ar + ar_scale * ar_rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
      station_ar[i] =
          cfg.hour_ar_phi * station_ar[i] + ar_scale * ar_rng.normal();
      const double base = cfg.base_flow * (1.0 + 0.10 * static_cast<double>(i % 5));
      const double scale = 1.0 + 0.05 * static_cast<double>(i % 3);
      const double level = base + cfg.peak_amplitude * scale * day_amp[day] *
                                      weekly(ts) * profile(hour);
      const double v = level + shared_ar + station_ar[i] +
                       cfg.noise_sigma * noise_rng.normal();
      out.flows.values(t, i) = std::max(0.0, v);
    }
  }

  // Crashes thinned from flow level: busier station-hours see more crashes.
  if (cfg.crash_rate > 0.0) {
    double mean_flow = 0.0;
    for (std::size_t t = 0; t < total; ++t)
      for (std::size_t i = 0; i < n; ++i) mean_flow += out.flows.values(t, i);
    mean_flow /= static_cast<double>(total * n);

    rng::Engine crash_rng(rng::stream_seed(seed, {4}));
    static const int weather_codes[] = {1, 1, 1, 2, 2, 4, 6, 3, 5, 99};
    for (std::size_t t = 0; t < total; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        const double p =
            cfg.crash_rate * out.flows.values(t, i) / std::max(1.0, mean_flow);
        if (crash_rng.uniform01() >= p) continue;
        CrashRecord rec;
        rec.when = out.flows.timestamps[t] +
                   static_cast<Minutes>(crash_rng.below(
                       static_cast<std::uint64_t>(cfg.step_minutes)));
        rec.weather = weather_codes[crash_rng.below(10)];
        rec.lat = out.net.stations[i].lat + crash_rng.uniform(-0.004, 0.004);
        rec.lon = out.net.stations[i].lon + crash_rng.uniform(-0.004, 0.004);
        rec.functional_class = 1 + static_cast<int>(crash_rng.below(7));
        rec.speed_limit = 50.0 + 5.0 * static_cast<double>(crash_rng.below(5));
        rec.vehicle_speed =
            std::max(5.0, rec.speed_limit + 12.0 * crash_rng.normal());
        rec.work_zone = crash_rng.uniform01() < 0.1 ? 1 : 0;
        rec.clearance_min = std::clamp(
            std::exp(std::log(45.0) + 0.5 * crash_rng.normal()), 5.0, 360.0);
        out.crashes.records.push_back(rec);
      }
    }
  }
  return out;
}

}  // namespace flowcast
