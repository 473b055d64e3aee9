#include "doctest.h"

#include <cmath>

#include "flowcast/evaluation.hpp"
#include "flowcast/rng.hpp"

using namespace flowcast;

namespace {

FlowSeries hourly(std::size_t steps, std::size_t n,
                  double (*f)(std::size_t t, std::size_t i)) {
  FlowSeries flows;
  flows.step_minutes = 60;
  const Minutes t0 = days_from_civil(2024, 5, 1) * 1440;
  flows.values = Matrix(steps, n);
  flows.timestamps.resize(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    flows.timestamps[t] = t0 + static_cast<Minutes>(t) * 60;
    for (std::size_t i = 0; i < n; ++i) flows.values(t, i) = f(t, i);
  }
  return flows;
}

}  // namespace

TEST_SUITE_BEGIN("evaluation");

TEST_CASE("mae and rmse worked example") {
  Matrix pred(2, 1), truth(2, 1);
  pred(0, 0) = 1;
  pred(1, 0) = 2;
  truth(0, 0) = 2;
  truth(1, 0) = 4;
  auto acc = mae_rmse({pred}, {truth});
  CHECK(acc.mae_overall == doctest::Approx(1.5));
  CHECK(acc.rmse_overall == doctest::Approx(std::sqrt(2.5)));
  CHECK(acc.rmse_overall == doctest::Approx(1.5811).epsilon(1e-4));
}

TEST_CASE("perfect forecast scores zero") {
  Matrix m(3, 2, 7.0);
  auto acc = mae_rmse({m}, {m});
  CHECK(acc.mae_overall == 0.0);
  CHECK(acc.rmse_overall == 0.0);
}

TEST_CASE("rmse dominates mae on every horizon") {
  rng::Engine eng(2);
  std::vector<Matrix> pred, truth;
  for (int t = 0; t < 8; ++t) {
    Matrix p(4, 3), y(4, 3);
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t i = 0; i < 3; ++i) {
        p(k, i) = eng.uniform(-5, 5);
        y(k, i) = eng.uniform(-5, 5);
      }
    pred.push_back(p);
    truth.push_back(y);
  }
  auto acc = mae_rmse(pred, truth);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(acc.rmse[k] >= acc.mae[k]);
    CHECK(acc.mae[k] >= 0.0);
  }
  CHECK(acc.rmse_overall >= acc.mae_overall);
}

TEST_CASE("empty evaluation set is rejected") {
  CHECK_THROWS_AS(mae_rmse({}, {}), ValidationError);
}

TEST_CASE("coverage counts four of five points") {
  Matrix lower(5, 1, 0.0), upper(5, 1, 1.0), truth(5, 1, 0.5);
  truth(4, 0) = 2.0;  // outside
  auto cov = picp_mpiw({lower}, {upper}, {truth});
  CHECK(cov.picp_overall == doctest::Approx(80.0));
  CHECK(cov.mpiw_overall == doctest::Approx(1.0));
}

TEST_CASE("degenerate intervals at the truth cover fully with zero width") {
  Matrix m(2, 2, 3.0);
  auto cov = picp_mpiw({m}, {m}, {m});
  CHECK(cov.picp_overall == 100.0);
  CHECK(cov.mpiw_overall == 0.0);
}

TEST_CASE("crossed bounds are rejected") {
  Matrix lower(1, 1, 2.0), upper(1, 1, 1.0), truth(1, 1, 1.5);
  CHECK_THROWS_AS(picp_mpiw({lower}, {upper}, {truth}), ValidationError);
}

TEST_CASE("historical average of a small cell") {
  // Three days of training data; hour 8 takes values {2, 4, 6}.
  auto flows = hourly(72, 1, [](std::size_t t, std::size_t) {
    const std::size_t hour = t % 24;
    if (hour == 8) return 2.0 + 2.0 * static_cast<double>(t / 24);
    return 10.0;
  });
  HaBaseline ha(flows, 72);
  CHECK(ha.table(8, 0) == doctest::Approx(4.0));
  CHECK(ha.table(9, 0) == doctest::Approx(10.0));
}

TEST_CASE("constant series predicts itself exactly") {
  auto flows = hourly(96, 2, [](std::size_t, std::size_t) { return 11.0; });
  HaBaseline ha(flows, 48);
  const Matrix fc = ha.forecast(flows.timestamps, 60, 4);
  std::vector<Matrix> pred{fc}, truth{Matrix(4, 2, 11.0)};
  auto acc = mae_rmse(pred, truth);
  CHECK(acc.mae_overall == 0.0);
}

TEST_CASE("historical average error is flat across horizons") {
  // Train on a periodic day profile; evaluate on the same profile shifted
  // by a constant. Every horizon then misses by exactly that constant.
  auto train_flows = hourly(
      96, 2, [](std::size_t t, std::size_t i) {
        return 50.0 + 10.0 * std::sin(2.0 * std::numbers::pi *
                                      static_cast<double>(t % 24) / 24.0) +
               3.0 * static_cast<double>(i);
      });
  HaBaseline ha(train_flows, 96);

  const double delta = 4.0;
  std::vector<Matrix> pred, truth;
  for (std::size_t s = 0; s + 4 <= 40; ++s) {
    const Matrix fc = ha.forecast(train_flows.timestamps, s, 4);
    Matrix y = fc;
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t i = 0; i < 2; ++i) y(k, i) += delta;
    pred.push_back(fc);
    truth.push_back(y);
  }
  auto acc = mae_rmse(pred, truth);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(acc.mae[k] == doctest::Approx(delta));  // exact flatness
    CHECK(acc.rmse[k] == doctest::Approx(delta));
  }
}

TEST_CASE("ha forecast depends only on the target timestamp") {
  auto flows = hourly(120, 1, [](std::size_t t, std::size_t) {
    return 5.0 + static_cast<double>(t % 24);
  });
  HaBaseline ha(flows, 96);
  // Two windows reaching the same target time at different horizons.
  const Matrix a = ha.forecast(flows.timestamps, 100, 4);  // targets 100..103
  const Matrix b = ha.forecast(flows.timestamps, 102, 4);  // targets 102..105
  CHECK(a(2, 0) == b(0, 0));
  CHECK(a(3, 0) == b(1, 0));
}

TEST_CASE("kolmogorov survival function reference points") {
  CHECK(kolmogorov_q(1e-8) == doctest::Approx(1.0));
  CHECK(kolmogorov_q(10.0) == doctest::Approx(0.0));
  // Classic 5% critical value of the Kolmogorov distribution.
  CHECK(kolmogorov_q(1.358) == doctest::Approx(0.05).epsilon(0.02));
}

TEST_CASE("ks accepts true log-normal samples in most seeds") {
  int passes = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    rng::Engine eng(rng::stream_seed(seed, {7}));
    std::vector<double> samples(200);
    for (auto& v : samples) v = eng.lognormal(3.0, 0.4);
    if (ks_lognormal(samples).p_value > 0.05) ++passes;
  }
  CHECK(passes >= 9);
}

TEST_CASE("ks rejects a mismatched fixture") {
  // Uniform(0,1)+0.5 samples tested against the log-normal fit of a
  // heavy-tailed target distribution.
  rng::Engine eng(99);
  std::vector<double> heavy(400);
  for (auto& v : heavy) v = eng.lognormal(0.0, 0.9);
  const KsResult fit = ks_lognormal(heavy);

  std::vector<double> uniform(200);
  for (auto& v : uniform) v = 0.5 + eng.uniform01();
  const KsResult res = ks_lognormal_given(uniform, fit.mu_ln, fit.sigma_ln);
  CHECK(res.p_value < 0.05);
}

TEST_CASE("ks input validation") {
  std::vector<double> few(5, 1.0);
  CHECK_THROWS_AS(ks_lognormal(few), DomainError);
  std::vector<double> bad(25, 1.0);
  bad[3] = -2.0;
  CHECK_THROWS_AS(ks_lognormal(bad), DomainError);
}

TEST_CASE("single-edge trip samples match the analytic mean") {
  CvProfile profile;
  profile.cv.fill(0.1);
  auto means = replicate_hourly(Matrix(2, 2, 30.0));
  auto mc = monte_carlo_route(means, profile, {0, 1}, 8, 10000, 4);
  CHECK(mc.samples.size() == 10000);
  CHECK(mc.mean == doctest::Approx(30.0).epsilon(0.02));
}

TEST_CASE("single-edge trip samples pass the log-normal test") {
  CvProfile profile;
  profile.cv.fill(0.25);
  auto means = replicate_hourly(Matrix(2, 2, 45.0));
  auto mc = monte_carlo_route(means, profile, {0, 1}, 10, 200, 11);
  const KsResult res = ks_lognormal(mc.samples);
  CHECK(res.p_value > 0.05);
}

TEST_CASE("degenerate co-located route stays near the floor") {
  // Identical coordinates floor the baseline at the self-time.
  Station a, b;
  a.id = "A";
  a.lat = 40.0;
  a.lon = -83.0;
  b = a;
  b.id = "B";
  auto net = make_network({a, b});
  const Matrix t_mean = baseline_travel_times(net, 60.0);
  CvProfile profile;
  profile.cv.fill(0.1);
  auto mc = monte_carlo_route(replicate_hourly(t_mean), profile, {0, 1}, 0,
                              200, 21);
  CHECK(mc.mean == doctest::Approx(0.5).epsilon(0.05));
  for (double v : mc.samples) CHECK(v < 1.0);
}

TEST_CASE("hour advances as cumulative time crosses boundaries") {
  // Leg 1 at hour 8 takes ~90 minutes, so leg 2 runs at hour 9 where the
  // network is far slower.
  std::array<Matrix, 24> means;
  for (int h = 0; h < 24; ++h) means[h] = Matrix(3, 3, 90.0);
  means[9] = Matrix(3, 3, 600.0);
  CvProfile profile;
  profile.cv.fill(0.1);
  auto mc = monte_carlo_route(means, profile, {0, 1, 2}, 8, 200, 31);
  CHECK(mc.mean > 400.0);

  // Without crossing (fast first leg) the second leg stays at hour 8.
  std::array<Matrix, 24> fast = means;
  for (int h = 0; h < 24; ++h) fast[h] = Matrix(3, 3, 10.0);
  fast[9] = Matrix(3, 3, 600.0);
  auto mc_fast = monte_carlo_route(fast, profile, {0, 1, 2}, 8, 200, 31);
  CHECK(mc_fast.mean < 50.0);
}

TEST_CASE("route validation errors") {
  CvProfile profile;
  profile.cv.fill(0.2);
  auto means = replicate_hourly(Matrix(3, 3, 10.0));
  CHECK_THROWS_AS(monte_carlo_route(means, profile, {0}, 8, 10, 1),
                  ValidationError);
  CHECK_THROWS_AS(monte_carlo_route(means, profile, {0, 0}, 8, 10, 1),
                  ValidationError);
  CHECK_THROWS_AS(monte_carlo_route(means, profile, {0, 1}, 8, 0, 1),
                  ValidationError);
  CHECK_THROWS_AS(monte_carlo_route(means, profile, {0, 1}, 25, 10, 1),
                  DomainError);
  CHECK_THROWS_AS(monte_carlo_route(means, profile, {0, 7}, 8, 10, 1),
                  ValidationError);
}

TEST_SUITE_END();
