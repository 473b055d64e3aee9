#pragma once

#include <cstdint>
#include <vector>

#include "flowcast/data.hpp"
#include "flowcast/matrix.hpp"
#include "flowcast/training.hpp"
#include "flowcast/travel_time.hpp"

namespace flowcast {

// Accuracy and interval-quality metrics over an evaluation set, reported
// per horizon and pooled.
struct MetricReport {
  std::vector<double> mae;   // per horizon
  std::vector<double> rmse;  // per horizon
  double mae_overall = 0.0;
  double rmse_overall = 0.0;
  std::vector<double> picp;  // percent, per horizon
  std::vector<double> mpiw;  // width units, per horizon
  double picp_overall = 0.0;
  double mpiw_overall = 0.0;
  double alpha = 0.0;
  std::size_t horizons = 0;
  std::size_t n_eval = 0;  // evaluated windows
};

// pred/truth: one H x N matrix per evaluation window.
struct AccuracyResult {
  std::vector<double> mae, rmse;
  double mae_overall = 0.0, rmse_overall = 0.0;
};

AccuracyResult mae_rmse(const std::vector<Matrix>& pred,
                        const std::vector<Matrix>& truth);

struct CoverageResult {
  std::vector<double> picp, mpiw;
  double picp_overall = 0.0, mpiw_overall = 0.0;
};

CoverageResult picp_mpiw(const std::vector<Matrix>& lower,
                         const std::vector<Matrix>& upper,
                         const std::vector<Matrix>& truth);

// Historical-average baseline: per (hour-of-day, node) means from the
// training step range; empty cells fall back to the node mean.
class HaBaseline {
 public:
  HaBaseline(const FlowSeries& flows, std::size_t train_steps);

  // Forecast for a window whose first target step is at `first_target`
  // (index into the flow grid); constant across horizons by construction.
  Matrix forecast(const std::vector<Minutes>& timestamps,
                  std::size_t first_target, std::size_t horizon) const;

  double table(int hour, std::size_t node) const {
    return table_(static_cast<std::size_t>(hour), node);
  }

 private:
  Matrix table_;  // 24 x N
};

// One-sample Kolmogorov-Smirnov test of log-normality. Parameters fitted by
// moments of the log-values unless supplied.
struct KsResult {
  double ks_stat = 0.0;
  double p_value = 0.0;
  double mu_ln = 0.0;
  double sigma_ln = 0.0;
  std::size_t n = 0;
};

KsResult ks_lognormal(const std::vector<double>& samples);
KsResult ks_lognormal_given(const std::vector<double>& samples, double mu_ln,
                            double sigma_ln);

// Asymptotic Kolmogorov survival function Q(lambda), 100-term series.
double kolmogorov_q(double lambda);

// Monte-Carlo trip-time sampler over a station route. Each run draws fresh
// log-normal edge times (mean from the hour-indexed matrix, CV from the
// profile) and advances the hour as cumulative minutes cross hour
// boundaries.
struct RouteMcResult {
  std::vector<double> samples;  // minutes per run
  double mean = 0.0;
  double std_dev = 0.0;
};

// `hourly_means[h]` supplies the mean travel-time matrix for hour h; pass a
// bank's t_mean replicated for the crash-free case or an adjacency bank's
// t_eff for the incident-aware case.
RouteMcResult monte_carlo_route(const std::array<Matrix, 24>& hourly_means,
                                const CvProfile& profile,
                                const std::vector<std::size_t>& route,
                                int start_hour, int runs, std::uint64_t seed);

// Convenience: hour-invariant means from a travel-time bank's baseline.
std::array<Matrix, 24> replicate_hourly(const Matrix& t_mean);

}  // namespace flowcast
