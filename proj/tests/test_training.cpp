#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "flowcast/evaluation.hpp"
#include "flowcast/rng.hpp"
#include "flowcast/training.hpp"
#include "test_util.hpp"

using namespace flowcast;

namespace {

FlowSeries series_of(std::size_t steps, std::size_t n,
                     double (*f)(std::size_t t, std::size_t i),
                     int start_minute = 0) {
  FlowSeries flows;
  flows.step_minutes = 60;
  const Minutes t0 = days_from_civil(2024, 3, 1) * 1440 + start_minute;
  flows.values = Matrix(steps, n);
  flows.timestamps.resize(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    flows.timestamps[t] = t0 + static_cast<Minutes>(t) * 60;
    for (std::size_t i = 0; i < n; ++i) flows.values(t, i) = f(t, i);
  }
  return flows;
}

struct PipelineFixture {
  SyntheticData data;
  CvProfile profile;
  TravelTimeBank bank;
  AdjacencyBank adjacency;
  WindowDataset windows;
  ModelConfig cfg;

  explicit PipelineFixture(std::uint64_t seed, int days = 10,
                           int n_stations = 3) {
    SyntheticConfig synth;
    synth.n_stations = n_stations;
    synth.days = days;
    synth.crash_rate = 0.0;
    data = generate_synthetic(synth, seed);
    profile = estimate_cv_profile(data.flows);
    const Matrix t_mean = baseline_travel_times(data.net, 60.0);
    bank = sample_bank(t_mean, profile, seed, 4);
    adjacency = build_adjacency(bank, zero_risk(data.net.size()), data.net,
                                AdjacencyParams{}, true);
    windows = make_windows(data.flows, 12, 2, SplitSpec{});

    cfg.window_len = 12;
    cfg.horizon = 2;
    cfg.patch_len = 3;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.temporal_depth = 1;
    cfg.spatial_depth = 1;
    cfg.dropout = 0.0;
  }
};

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("window count matches the sliding formula") {
  auto flows =
      series_of(30, 2, [](std::size_t t, std::size_t) { return 1.0 * t; });
  SplitSpec all;
  all.train_frac = 1.0;
  all.cal_frac = 0.0;
  auto ds = make_windows(flows, 24, 4, all);
  CHECK(ds.train.size() == 3);  // T - L - H + 1
  CHECK(ds.cal.empty());
  CHECK(ds.test.empty());
}

TEST_CASE("too-short series is rejected") {
  auto flows =
      series_of(20, 2, [](std::size_t, std::size_t) { return 1.0; });
  CHECK_THROWS_AS(make_windows(flows, 24, 4, SplitSpec{}), ValidationError);
}

TEST_CASE("windows never straddle split boundaries") {
  auto flows =
      series_of(100, 2, [](std::size_t t, std::size_t) { return 1.0 * t; });
  auto ds = make_windows(flows, 10, 2, SplitSpec{});  // t1=70, t2=85
  const std::size_t span = 12;
  for (const auto& w : ds.train) CHECK(w.start + span <= 70);
  for (const auto& w : ds.cal) {
    CHECK(w.start >= 70);
    CHECK(w.start + span <= 85);
  }
  for (const auto& w : ds.test) {
    CHECK(w.start >= 85);
    CHECK(w.start + span <= 100);
  }
}

TEST_CASE("constant series normalizes to zeros") {
  auto flows =
      series_of(60, 2, [](std::size_t, std::size_t) { return 42.0; });
  auto ds = make_windows(flows, 10, 2, SplitSpec{});
  for (std::size_t t = 0; t < 60; ++t)
    for (std::size_t i = 0; i < 2; ++i)
      CHECK(ds.normalized(t, i) == doctest::Approx(0.0));
}

TEST_CASE("hour tag comes from the last input step") {
  // Grid at :45 past the hour; a window whose last input lands on 17:45
  // carries tag 17.
  auto flows = series_of(
      48, 2, [](std::size_t t, std::size_t) { return 1.0 * t; }, 45);
  SplitSpec all;
  all.train_frac = 1.0;
  all.cal_frac = 0.0;
  auto ds = make_windows(flows, 6, 2, all);
  for (const auto& w : ds.train) {
    const Minutes last = flows.timestamps[w.start + 6 - 1];
    CHECK(w.h_tag == hour_of_day(last));
  }
  // Window starting at 12:45 ends inputs at 17:45.
  const auto& w12 = ds.train[12];
  CHECK(hour_of_day(flows.timestamps[w12.start + 5]) == w12.h_tag);
  CHECK(ds.train[12].h_tag == 17);
}

TEST_CASE("conformal order statistic on one through ten") {
  std::vector<double> r{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(conformal_quantile(r, 0.1) == 10.0);  // ceil(11*0.9) = 10th
  CHECK(conformal_quantile(r, 0.5) == 6.0);   // ceil(11*0.5) = 6th
}

TEST_CASE("quantile is monotone nonincreasing in alpha") {
  rng::Engine eng(8);
  std::vector<double> r;
  for (int i = 0; i < 37; ++i) r.push_back(std::abs(eng.normal()));
  double prev = 1e18;
  for (double alpha : {0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9}) {
    const double q = conformal_quantile(r, alpha);
    CHECK(q <= prev);
    prev = q;
  }
}

TEST_CASE("zero residuals collapse intervals to points") {
  std::vector<double> zeros(25, 0.0);
  CHECK(conformal_quantile(zeros, 0.1) == 0.0);
  ConformalRadii radii;
  radii.q = Matrix(2, 2, 0.0);
  Matrix forecast(2, 2, 5.0);
  auto iv = intervals(forecast, radii);
  CHECK(iv.lower == forecast);
  CHECK(iv.upper == forecast);
}

TEST_CASE("interval arithmetic and width identity") {
  ConformalRadii radii;
  radii.q = Matrix(1, 1, 2.0);
  Matrix forecast(1, 1, 5.0);
  auto iv = intervals(forecast, radii);
  CHECK(iv.lower(0, 0) == 3.0);
  CHECK(iv.upper(0, 0) == 7.0);
  CHECK(iv.upper(0, 0) - iv.lower(0, 0) == 2.0 * radii.q(0, 0));
}

TEST_CASE("mean interval width equals mean of twice the radii") {
  // MPIW is an algebraic function of the radii alone.
  ConformalRadii radii;
  radii.q = Matrix(2, 3);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < 3; ++i)
      radii.q(k, i) = 0.25 + static_cast<double>(k * 3 + i);
  std::vector<Matrix> lower, upper, truth;
  rng::Engine eng(31);
  for (int t = 0; t < 7; ++t) {
    Matrix forecast(2, 3);
    for (std::size_t j = 0; j < forecast.size(); ++j)
      forecast.data()[j] = eng.uniform(-10, 10);
    auto iv = intervals(forecast, radii);
    lower.push_back(iv.lower);
    upper.push_back(iv.upper);
    truth.push_back(forecast);
  }
  auto cov = picp_mpiw(lower, upper, truth);
  for (std::size_t k = 0; k < 2; ++k) {
    double expect = 0.0;
    for (std::size_t i = 0; i < 3; ++i) expect += 2.0 * radii.q(k, i) / 3.0;
    CHECK(cov.mpiw[k] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("training defaults follow the reported schedule") {
  TrainOptions opts;
  CHECK(opts.patience == 10);
  CHECK(opts.max_epochs == 20);
  CHECK(opts.lr == 1e-3);
}

TEST_CASE("order-statistic coverage holds on exchangeable residuals") {
  // Finite-sample band [1 - alpha - 2/sqrt(n_cal), 1] on fresh draws.
  const double alpha = 0.1;
  const std::size_t n_cal = 60, n_test = 400;
  int in_band = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    rng::Engine eng(rng::stream_seed(seed, {1}));
    std::vector<double> cal(n_cal);
    for (auto& v : cal) v = std::abs(eng.normal());
    const double q = conformal_quantile(cal, alpha);
    int covered = 0;
    for (std::size_t i = 0; i < n_test; ++i)
      if (std::abs(eng.normal()) <= q) ++covered;
    const double cov = static_cast<double>(covered) / n_test;
    if (cov >= 1.0 - alpha - 2.0 / std::sqrt(static_cast<double>(n_cal)))
      ++in_band;
  }
  CHECK(in_band >= 18);
}

TEST_CASE("radii file round-trips with alpha and count") {
  TempDir dir("radii");
  PipelineFixture fx(3);
  ConformalRadii radii;
  radii.alpha = 0.2;
  radii.n_cal = 17;
  radii.q = Matrix(2, 3);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < 3; ++i)
      radii.q(k, i) = 0.5 + static_cast<double>(k * 3 + i);
  save_radii(radii, fx.data.net, dir.file("radii.csv"));
  auto loaded = load_radii(dir.file("radii.csv"), fx.data.net);
  CHECK(loaded.alpha == 0.2);
  CHECK(loaded.n_cal == 17);
  CHECK(loaded.q == radii.q);
}

TEST_CASE("calibrated radii reproduce their order statistic") {
  PipelineFixture fx(5);
  ModelState state(fx.cfg, fx.data.net.size(), 7);
  auto radii = calibrate(state, fx.windows, fx.adjacency, 0.1);
  CHECK(radii.n_cal == fx.windows.cal.size());
  const std::size_t h = fx.windows.horizon, n = fx.data.net.size();
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> column(radii.n_cal);
      for (std::size_t t = 0; t < radii.n_cal; ++t)
        column[t] = radii.residuals[(t * h + k) * n + i];
      CHECK(radii.q(k, i) == conformal_quantile(column, 0.1));
      CHECK(radii.q(k, i) >= 0.0);
    }
}

TEST_CASE("zero learning rate freezes parameters") {
  PipelineFixture fx(9);
  ModelState state(fx.cfg, fx.data.net.size(), 11);
  const auto before = state.snapshot();
  TrainOptions opts;
  opts.lr = 0.0;
  opts.max_epochs = 2;
  opts.batch_size = 16;
  auto result = train(state, fx.windows, fx.adjacency, opts);
  const auto after = state.snapshot();
  for (std::size_t p = 0; p < before.size(); ++p)
    for (std::size_t i = 0; i < before[p].size(); ++i)
      CHECK(after[p][i] == before[p][i]);
  CHECK(result.history.size() == 2);
  CHECK(result.history[0].train_mse ==
        doctest::Approx(result.history[1].train_mse));
}

TEST_CASE("training reduces the loss on a learnable signal") {
  PipelineFixture fx(13);
  ModelState state(fx.cfg, fx.data.net.size(), 17);
  TrainOptions opts;
  opts.lr = 3e-3;
  opts.max_epochs = 4;
  opts.patience = 4;
  auto result = train(state, fx.windows, fx.adjacency, opts);
  REQUIRE(result.history.size() >= 2);
  CHECK(result.history.back().train_mse < result.history.front().train_mse);
}

TEST_CASE("training halts by max epochs and returns the best checkpoint") {
  PipelineFixture fx(19);
  ModelState state(fx.cfg, fx.data.net.size(), 23);
  TrainOptions opts;
  opts.lr = 1e-2;
  opts.max_epochs = 6;
  opts.patience = 3;
  auto result = train(state, fx.windows, fx.adjacency, opts);
  CHECK(result.history.size() <= 6);

  double best = result.history[0].val_mse;
  int best_epoch = 0;
  for (std::size_t e = 1; e < result.history.size(); ++e)
    if (result.history[e].val_mse < best) {
      best = result.history[e].val_mse;
      best_epoch = static_cast<int>(e);
    }
  CHECK(result.best_epoch == best_epoch);

  // The restored checkpoint evaluates to the recorded best validation MSE.
  double acc = 0.0;
  for (const auto& w : fx.windows.cal) {
    const ad::Tensor pred =
        predict(input_tensor(fx.windows, w), w.h_tag, fx.adjacency, state);
    const ad::Tensor truth = target_tensor(fx.windows, w);
    double mse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred[i] - truth[i];
      mse += d * d;
    }
    acc += mse / static_cast<double>(pred.size());
  }
  acc /= static_cast<double>(fx.windows.cal.size());
  CHECK(acc == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("acp and split-cp agree on the final radii") {
  PipelineFixture fx(29);
  TrainOptions opts;
  opts.lr = 1e-3;
  opts.max_epochs = 3;
  opts.seed = 5;

  ModelState acp_state(fx.cfg, fx.data.net.size(), 31);
  opts.acp = true;
  auto acp_result = train(acp_state, fx.windows, fx.adjacency, opts);
  CHECK(acp_result.history[0].mean_radius > 0.0);

  ModelState cp_state(fx.cfg, fx.data.net.size(), 31);
  opts.acp = false;
  auto cp_result = train(cp_state, fx.windows, fx.adjacency, opts);
  CHECK(cp_result.history[0].mean_radius == 0.0);

  // Same seeds, same best checkpoint, same final calibration.
  CHECK(acp_result.radii.q == cp_result.radii.q);
}

TEST_CASE("non-finite parameters abort with a diagnostic") {
  PipelineFixture fx(37);
  ModelState state(fx.cfg, fx.data.net.size(), 41);
  state.parameters()[0].second.node()->value[0] =
      std::numeric_limits<double>::quiet_NaN();
  TrainOptions opts;
  opts.max_epochs = 1;
  CHECK_THROWS_WITH_AS(train(state, fx.windows, fx.adjacency, opts),
                       doctest::Contains("diverged"), std::runtime_error);
}

TEST_SUITE_END();
