#include "flowcast/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flowcast/common.hpp"
#include "flowcast/rng.hpp"

namespace flowcast {

AccuracyResult mae_rmse(const std::vector<Matrix>& pred,
                        const std::vector<Matrix>& truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw ValidationError("mae_rmse: empty or mismatched evaluation set");
  const std::size_t h = pred[0].rows();
  const std::size_t n = pred[0].cols();
  AccuracyResult out;
  out.mae.assign(h, 0.0);
  out.rmse.assign(h, 0.0);
  double abs_acc = 0.0, sq_acc = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (!pred[t].same_shape(truth[t]) || pred[t].rows() != h ||
        pred[t].cols() != n)
      throw ShapeError("mae_rmse: inconsistent matrix shapes");
    for (std::size_t k = 0; k < h; ++k)
      for (std::size_t i = 0; i < n; ++i) {
        const double d = pred[t](k, i) - truth[t](k, i);
        out.mae[k] += std::abs(d);
        out.rmse[k] += d * d;
        abs_acc += std::abs(d);
        sq_acc += d * d;
      }
  }
  const double per_h = static_cast<double>(pred.size() * n);
  for (std::size_t k = 0; k < h; ++k) {
    out.mae[k] /= per_h;
    out.rmse[k] = std::sqrt(out.rmse[k] / per_h);
  }
  const double total = per_h * static_cast<double>(h);
  out.mae_overall = abs_acc / total;
  out.rmse_overall = std::sqrt(sq_acc / total);
  return out;
}

CoverageResult picp_mpiw(const std::vector<Matrix>& lower,
                         const std::vector<Matrix>& upper,
                         const std::vector<Matrix>& truth) {
  if (lower.empty() || lower.size() != upper.size() ||
      lower.size() != truth.size())
    throw ValidationError("picp_mpiw: empty or mismatched evaluation set");
  const std::size_t h = lower[0].rows();
  const std::size_t n = lower[0].cols();
  CoverageResult out;
  out.picp.assign(h, 0.0);
  out.mpiw.assign(h, 0.0);
  double cover_acc = 0.0, width_acc = 0.0;
  for (std::size_t t = 0; t < lower.size(); ++t) {
    for (std::size_t k = 0; k < h; ++k)
      for (std::size_t i = 0; i < n; ++i) {
        const double lo = lower[t](k, i), hi = upper[t](k, i);
        if (lo > hi)
          throw ValidationError("picp_mpiw: lower bound exceeds upper bound");
        const double y = truth[t](k, i);
        const double inside = (lo <= y && y <= hi) ? 1.0 : 0.0;
        out.picp[k] += inside;
        out.mpiw[k] += hi - lo;
        cover_acc += inside;
        width_acc += hi - lo;
      }
  }
  const double per_h = static_cast<double>(lower.size() * n);
  for (std::size_t k = 0; k < h; ++k) {
    out.picp[k] = 100.0 * out.picp[k] / per_h;
    out.mpiw[k] /= per_h;
  }
  const double total = per_h * static_cast<double>(h);
  out.picp_overall = 100.0 * cover_acc / total;
  out.mpiw_overall = width_acc / total;
  return out;
}

HaBaseline::HaBaseline(const FlowSeries& flows, std::size_t train_steps) {
  const std::size_t n = flows.values.cols();
  if (train_steps == 0 || train_steps > flows.timestamps.size())
    throw ValidationError("ha_baseline: bad training range");
  table_ = Matrix(24, n);
  Matrix counts(24, n);
  std::vector<double> node_sum(n, 0.0);
  for (std::size_t t = 0; t < train_steps; ++t) {
    const int h = hour_of_day(flows.timestamps[t]);
    for (std::size_t i = 0; i < n; ++i) {
      table_(static_cast<std::size_t>(h), i) += flows.values(t, i);
      counts(static_cast<std::size_t>(h), i) += 1.0;
      node_sum[i] += flows.values(t, i);
    }
  }
  for (std::size_t h = 0; h < 24; ++h)
    for (std::size_t i = 0; i < n; ++i) {
      if (counts(h, i) > 0.0) {
        table_(h, i) /= counts(h, i);
      } else {
        // No training data at this hour: fall back to the node mean.
        table_(h, i) = node_sum[i] / static_cast<double>(train_steps);
      }
    }
}

Matrix HaBaseline::forecast(const std::vector<Minutes>& timestamps,
                            std::size_t first_target,
                            std::size_t horizon) const {
  const std::size_t n = table_.cols();
  Matrix out(horizon, n);
  for (std::size_t k = 0; k < horizon; ++k) {
    const int h = hour_of_day(timestamps[first_target + k]);
    for (std::size_t i = 0; i < n; ++i)
      out(k, i) = table_(static_cast<std::size_t>(h), i);
  }
  return out;
}

double kolmogorov_q(double lambda) {
  if (lambda <= 0.0) return 1.0;
  // Alternating series with a convergence monitor; when 100 terms are not
  // enough (tiny lambda) the survival probability is 1 to working accuracy.
  const double a2 = -2.0 * lambda * lambda;
  double fac = 2.0, sum = 0.0, prev_term = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = fac * std::exp(a2 * j * j);
    sum += term;
    if (std::abs(term) <= 0.001 * prev_term ||
        std::abs(term) <= 1e-12 * std::abs(sum))
      return std::clamp(sum, 0.0, 1.0);
    fac = -fac;
    prev_term = std::abs(term);
  }
  return 1.0;
}

KsResult ks_lognormal_given(const std::vector<double>& samples, double mu_ln,
                            double sigma_ln) {
  if (samples.size() < 20)
    throw DomainError("ks_lognormal: needs at least 20 samples, got " +
                      std::to_string(samples.size()));
  for (double v : samples)
    if (v <= 0.0)
      throw DomainError("ks_lognormal: samples must be positive");

  std::vector<double> sorted(samples);
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());

  KsResult out;
  out.n = sorted.size();
  out.mu_ln = mu_ln;
  out.sigma_ln = sigma_ln;
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    // Fitted CDF via the normal CDF of the log-values.
    const double z = (std::log(sorted[i]) - mu_ln) / sigma_ln;
    const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
    const double lo = static_cast<double>(i) / n;
    const double hi = static_cast<double>(i + 1) / n;
    d = std::max({d, cdf - lo, hi - cdf});
  }
  out.ks_stat = d;
  // Asymptotic Kolmogorov distribution with the standard finite-n argument
  // correction (sqrt(n) + 0.12 + 0.11/sqrt(n)).
  const double sn = std::sqrt(n);
  out.p_value = kolmogorov_q(d * (sn + 0.12 + 0.11 / sn));
  return out;
}

KsResult ks_lognormal(const std::vector<double>& samples) {
  if (samples.size() < 20)
    throw DomainError("ks_lognormal: needs at least 20 samples, got " +
                      std::to_string(samples.size()));
  double mu = 0.0;
  for (double v : samples) {
    if (v <= 0.0) throw DomainError("ks_lognormal: samples must be positive");
    mu += std::log(v);
  }
  mu /= static_cast<double>(samples.size());
  double var = 0.0;
  for (double v : samples) {
    const double d = std::log(v) - mu;
    var += d * d;
  }
  var /= static_cast<double>(samples.size());
  const double sigma = std::max(std::sqrt(var), kEps);
  return ks_lognormal_given(samples, mu, sigma);
}

std::array<Matrix, 24> replicate_hourly(const Matrix& t_mean) {
  std::array<Matrix, 24> out;
  out.fill(t_mean);
  return out;
}

RouteMcResult monte_carlo_route(const std::array<Matrix, 24>& hourly_means,
                                const CvProfile& profile,
                                const std::vector<std::size_t>& route,
                                int start_hour, int runs, std::uint64_t seed) {
  if (route.size() < 2)
    throw ValidationError("monte_carlo_route: route needs at least 2 stations");
  for (std::size_t i = 0; i + 1 < route.size(); ++i)
    if (route[i] == route[i + 1])
      throw ValidationError(
          "monte_carlo_route: consecutive route stations must differ");
  if (start_hour < 0 || start_hour > 23)
    throw DomainError("monte_carlo_route: start_hour must be in 0..23");
  if (runs < 1) throw ValidationError("monte_carlo_route: runs must be >= 1");
  const std::size_t n = hourly_means[0].rows();
  for (std::size_t idx : route)
    if (idx >= n)
      throw ValidationError("monte_carlo_route: station index out of range");

  RouteMcResult out;
  out.samples.reserve(static_cast<std::size_t>(runs));
  for (int run = 0; run < runs; ++run) {
    rng::Engine eng(rng::stream_seed(
        seed, {0x726f757465u, static_cast<std::uint64_t>(run)}));
    double elapsed = 0.0;
    for (std::size_t leg = 0; leg + 1 < route.size(); ++leg) {
      const int hour =
          (start_hour + static_cast<int>(elapsed / 60.0)) % 24;
      const double mean = hourly_means[hour](route[leg], route[leg + 1]);
      const auto p = lognormal_params(mean, profile.cv[hour]);
      elapsed += eng.lognormal(p.mu_ln, p.sigma_ln);
    }
    out.samples.push_back(elapsed);
  }

  double sum = 0.0;
  for (double v : out.samples) sum += v;
  out.mean = sum / static_cast<double>(out.samples.size());
  double var = 0.0;
  for (double v : out.samples) var += (v - out.mean) * (v - out.mean);
  out.std_dev = std::sqrt(var / static_cast<double>(out.samples.size()));
  return out;
}

}  // namespace flowcast
