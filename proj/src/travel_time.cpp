#include "flowcast/travel_time.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "flowcast/common.hpp"
#include "flowcast/csv.hpp"
#include "flowcast/geo.hpp"
#include "flowcast/rng.hpp"

namespace flowcast {

CvProfile estimate_cv_profile(const FlowSeries& flows,
                              std::vector<std::string>* warnings) {
  std::int64_t first_day = day_index(flows.timestamps.front());
  std::int64_t last_day = day_index(flows.timestamps.back());
  if (last_day - first_day < 1)
    throw ValidationError("cv profile needs flows spanning >= 2 distinct days");

  const std::size_t T = flows.timestamps.size();
  const std::size_t n = flows.values.cols();
  std::array<double, 24> sum{}, sumsq{};
  std::array<std::size_t, 24> count{};
  for (std::size_t t = 0; t < T; ++t) {
    const int h = hour_of_day(flows.timestamps[t]);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = flows.values(t, i);
      sum[h] += v;
      sumsq[h] += v * v;
      ++count[h];
    }
  }

  CvProfile profile;
  for (int h = 0; h < 24; ++h) {
    if (count[h] == 0) {
      profile.cv[h] = CvProfile::kFloor;
      if (warnings)
        warnings->push_back("hour " + std::to_string(h) +
                            ": no samples, cv floored");
      continue;
    }
    const double mean = sum[h] / static_cast<double>(count[h]);
    if (mean <= 0.0) {
      profile.cv[h] = CvProfile::kFloor;
      if (warnings)
        warnings->push_back("hour " + std::to_string(h) +
                            ": zero mean flow, cv floored");
      continue;
    }
    const double var =
        std::max(0.0, sumsq[h] / static_cast<double>(count[h]) - mean * mean);
    profile.cv[h] =
        std::clamp(std::sqrt(var) / mean, CvProfile::kFloor, CvProfile::kCeil);
  }
  return profile;
}

LogNormalParams lognormal_params(double t_mean, double cv) {
  if (t_mean <= 0.0)
    throw DomainError("lognormal_params: t_mean must be positive, got " +
                      std::to_string(t_mean));
  if (cv <= 0.0)
    throw DomainError("lognormal_params: cv must be positive, got " +
                      std::to_string(cv));
  LogNormalParams p;
  p.sigma_ln = std::sqrt(std::log(cv * cv + 1.0));
  p.mu_ln = std::log(t_mean) - 0.5 * p.sigma_ln * p.sigma_ln;
  return p;
}

namespace {
constexpr double kSelfTimeMinutes = 0.5;
}

Matrix baseline_travel_times(const StationNetwork& net, double speed_mph,
                             const std::optional<std::string>& override_csv) {
  if (speed_mph <= 0.0)
    throw DomainError("baseline_travel_times: speed must be positive");
  const std::size_t n = net.size();
  Matrix t_mean(n, n, kSelfTimeMinutes);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double miles =
          haversine_miles(net.stations[i].lat, net.stations[i].lon,
                          net.stations[j].lat, net.stations[j].lon);
      t_mean(i, j) = std::max(kSelfTimeMinutes, miles / speed_mph * 60.0);
    }
  }
  if (override_csv) {
    const CsvTable t = read_csv(*override_csv);
    const std::size_t c_from = t.column("from", *override_csv);
    const std::size_t c_to = t.column("to", *override_csv);
    const std::size_t c_min = t.column("minutes", *override_csv);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const std::string ctx = *override_csv + " row " + std::to_string(r + 2);
      const std::size_t i = net.index_of(t.rows[r][c_from]);
      const std::size_t j = net.index_of(t.rows[r][c_to]);
      const double v = parse_double(t.rows[r][c_min], ctx);
      if (v <= 0) throw ValidationError(ctx + ": minutes must be positive");
      t_mean(i, j) = v;
    }
  }
  return t_mean;
}

TravelTimeBank sample_bank(const Matrix& t_mean, const CvProfile& profile,
                           std::uint64_t seed, int samples_per_edge) {
  if (samples_per_edge < 1)
    throw DomainError("sample_bank: samples_per_edge must be >= 1");
  TravelTimeBank bank;
  bank.t_mean = t_mean;
  bank.seed = seed;
  bank.samples_per_edge = samples_per_edge;
  const std::size_t n = t_mean.rows();
  for (int h = 0; h < 24; ++h) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const auto p = lognormal_params(t_mean(i, j), profile.cv[h]);
        rng::Engine eng(rng::stream_seed(
            seed, {0x7261u, static_cast<std::uint64_t>(h), i, j}));
        double acc = 0.0;
        for (int s = 0; s < samples_per_edge; ++s)
          acc += eng.lognormal(p.mu_ln, p.sigma_ln);
        m(i, j) = acc / samples_per_edge;
      }
    }
    bank.banks[h] = std::move(m);
  }
  return bank;
}

void write_matrix_csv(const Matrix& m, const StationNetwork& net,
                      const std::string& path) {
  std::vector<std::string> header{"id"};
  for (const auto& s : net.stations) header.push_back(s.id);
  std::vector<std::vector<std::string>> rows;
  rows.reserve(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::vector<std::string> row{net.stations[i].id};
    for (std::size_t j = 0; j < m.cols(); ++j)
      row.push_back(format_double(m(i, j)));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

Matrix read_matrix_csv(const std::string& path, const StationNetwork& net) {
  const CsvTable t = read_csv(path);
  const std::size_t n = net.size();
  if (t.header.size() != n + 1 || t.rows.size() != n)
    throw ValidationError(path + ": matrix dimensions do not match network");
  for (std::size_t j = 0; j < n; ++j)
    if (t.header[j + 1] != net.stations[j].id)
      throw ValidationError(path + ": column header mismatch at " +
                            t.header[j + 1]);
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (t.rows[i][0] != net.stations[i].id)
      throw ValidationError(path + ": row header mismatch at " + t.rows[i][0]);
    for (std::size_t j = 0; j < n; ++j)
      m(i, j) = parse_double(t.rows[i][j + 1], path);
  }
  return m;
}

namespace {

std::string bank_file(int h) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "bank_h%02d.csv", h);
  return buf;
}

}  // namespace

void export_bank(const TravelTimeBank& bank, const CvProfile& profile,
                 const StationNetwork& net, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_matrix_csv(bank.t_mean, net, dir + "/t_mean.csv");
  for (int h = 0; h < 24; ++h)
    write_matrix_csv(bank.banks[h], net, dir + "/" + bank_file(h));

  nlohmann::ordered_json meta;
  meta["seed"] = bank.seed;
  meta["samples_per_edge"] = bank.samples_per_edge;
  meta["cv_profile"] = profile.cv;
  std::ofstream out(dir + "/meta.json");
  out << meta.dump(2) << "\n";
}

TravelTimeBank load_bank(const std::string& dir, const StationNetwork& net,
                         CvProfile* profile_out) {
  TravelTimeBank bank;
  bank.t_mean = read_matrix_csv(dir + "/t_mean.csv", net);
  for (int h = 0; h < 24; ++h)
    bank.banks[h] = read_matrix_csv(dir + "/" + bank_file(h), net);
  std::ifstream in(dir + "/meta.json");
  if (!in) throw ValidationError(dir + "/meta.json: cannot open");
  nlohmann::json meta = nlohmann::json::parse(in);
  bank.seed = meta.at("seed").get<std::uint64_t>();
  bank.samples_per_edge = meta.at("samples_per_edge").get<int>();
  if (profile_out) {
    auto cv = meta.at("cv_profile").get<std::vector<double>>();
    if (cv.size() != 24)
      throw ValidationError(dir + "/meta.json: cv_profile must have 24 values");
    std::copy(cv.begin(), cv.end(), profile_out->cv.begin());
  }
  return bank;
}

}  // namespace flowcast
