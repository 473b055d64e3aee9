#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flowcast/data.hpp"
#include "flowcast/matrix.hpp"

namespace flowcast {

// Hour-of-day coefficient-of-variation profile for travel times, clipped to
// [0.1, 1.0]. Calm overnight hours sit at the floor, peak hours climb.
struct CvProfile {
  std::array<double, 24> cv{};

  static constexpr double kFloor = 0.1;
  static constexpr double kCeil = 1.0;
};

// Pools flow readings per hour across all days and stations and takes
// population std / mean, clipped into the profile range. Hours with zero
// mean flow fall back to the floor (reported through `warnings`).
CvProfile estimate_cv_profile(const FlowSeries& flows,
                              std::vector<std::string>* warnings = nullptr);

struct LogNormalParams {
  double mu_ln = 0.0;
  double sigma_ln = 0.0;
};

// Parameters such that the distribution mean is exactly t_mean and the
// coefficient of variation is exactly cv.
LogNormalParams lognormal_params(double t_mean, double cv);

// Distance-derived baseline mean travel times in minutes. Diagonal is a
// fixed 0.5-minute self-time; off-diagonal entries are floored at the same
// value so the matrix stays strictly positive even for co-located stations.
// The optional override CSV (`from,to,minutes`) wins where present.
Matrix baseline_travel_times(const StationNetwork& net, double speed_mph,
                             const std::optional<std::string>& override_csv =
                                 std::nullopt);

// 24 sampled hour-indexed travel-time matrices around t_mean. Each entry is
// the mean of `samples_per_edge` log-normal draws with that hour's CV, seeded
// per (hour, i, j) so the result is independent of iteration order.
struct TravelTimeBank {
  Matrix t_mean;
  std::array<Matrix, 24> banks;
  std::uint64_t seed = 0;
  int samples_per_edge = 8;
};

TravelTimeBank sample_bank(const Matrix& t_mean, const CvProfile& profile,
                           std::uint64_t seed, int samples_per_edge);

// Directory export/import: t_mean.csv, bank_h00.csv .. bank_h23.csv with
// station-id headers, plus meta.json (seed, samples per edge, CV profile).
void export_bank(const TravelTimeBank& bank, const CvProfile& profile,
                 const StationNetwork& net, const std::string& dir);
TravelTimeBank load_bank(const std::string& dir, const StationNetwork& net,
                         CvProfile* profile_out = nullptr);

// Shared matrix-CSV helpers (station ids as row/column headers).
void write_matrix_csv(const Matrix& m, const StationNetwork& net,
                      const std::string& path);
Matrix read_matrix_csv(const std::string& path, const StationNetwork& net);

}  // namespace flowcast
