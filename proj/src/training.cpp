#include "flowcast/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "flowcast/common.hpp"
#include "flowcast/csv.hpp"
#include "flowcast/rng.hpp"

namespace flowcast {

WindowDataset make_windows(const FlowSeries& flows, std::size_t window_len,
                           std::size_t horizon, const SplitSpec& splits) {
  const std::size_t T = flows.timestamps.size();
  const std::size_t n = flows.values.cols();
  if (T < window_len + horizon)
    throw ValidationError("make_windows: series length " + std::to_string(T) +
                          " shorter than window+horizon " +
                          std::to_string(window_len + horizon));
  if (splits.train_frac <= 0.0 || splits.cal_frac < 0.0 ||
      splits.train_frac + splits.cal_frac > 1.0)
    throw ValidationError("make_windows: bad split fractions");

  WindowDataset ds;
  ds.window_len = window_len;
  ds.horizon = horizon;
  ds.timestamps = flows.timestamps;
  ds.raw = flows.values;

  const std::size_t t1 =
      static_cast<std::size_t>(splits.train_frac * static_cast<double>(T));
  const std::size_t t2 =
      t1 + static_cast<std::size_t>(splits.cal_frac * static_cast<double>(T));

  // Per-node z-score statistics from the training step range only.
  ds.norm.mean.assign(n, 0.0);
  ds.norm.std.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t t = 0; t < t1; ++t) {
      sum += flows.values(t, j);
      sumsq += flows.values(t, j) * flows.values(t, j);
    }
    const double mean = sum / static_cast<double>(t1);
    const double var =
        std::max(0.0, sumsq / static_cast<double>(t1) - mean * mean);
    ds.norm.mean[j] = mean;
    ds.norm.std[j] = std::max(std::sqrt(var), kEps);
  }

  ds.normalized = Matrix(T, n);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < n; ++j)
      ds.normalized(t, j) =
          (flows.values(t, j) - ds.norm.mean[j]) / ds.norm.std[j];

  const std::size_t span = window_len + horizon;
  const auto collect = [&](std::size_t lo, std::size_t hi,
                           std::vector<WindowSample>& out) {
    for (std::size_t s = lo; s + span <= hi; ++s) {
      WindowSample w;
      w.start = s;
      w.h_tag = hour_of_day(flows.timestamps[s + window_len - 1]);
      out.push_back(w);
    }
  };
  collect(0, t1, ds.train);
  collect(t1, t2, ds.cal);
  collect(t2, T, ds.test);
  return ds;
}

ad::Tensor input_tensor(const WindowDataset& ds, const WindowSample& w) {
  const std::size_t n = ds.normalized.cols();
  ad::Tensor x({ds.window_len, n});
  for (std::size_t t = 0; t < ds.window_len; ++t)
    for (std::size_t j = 0; j < n; ++j)
      x.at(t, j) = ds.normalized(w.start + t, j);
  return x;
}

ad::Tensor target_tensor(const WindowDataset& ds, const WindowSample& w) {
  const std::size_t n = ds.normalized.cols();
  ad::Tensor y({ds.horizon, n});
  for (std::size_t k = 0; k < ds.horizon; ++k)
    for (std::size_t j = 0; j < n; ++j)
      y.at(k, j) = ds.normalized(w.start + ds.window_len + k, j);
  return y;
}

Matrix target_raw(const WindowDataset& ds, const WindowSample& w) {
  const std::size_t n = ds.raw.cols();
  Matrix y(ds.horizon, n);
  for (std::size_t k = 0; k < ds.horizon; ++k)
    for (std::size_t j = 0; j < n; ++j)
      y(k, j) = ds.raw(w.start + ds.window_len + k, j);
  return y;
}

Matrix denormalize(const WindowDataset& ds, const ad::Tensor& pred_norm) {
  const std::size_t h = pred_norm.dim(0), n = pred_norm.dim(1);
  Matrix out(h, n);
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t j = 0; j < n; ++j)
      out(k, j) = pred_norm.at(k, j) * ds.norm.std[j] + ds.norm.mean[j];
  return out;
}

double conformal_quantile(std::vector<double> residuals, double alpha) {
  if (residuals.empty())
    throw ValidationError("conformal_quantile: no residuals");
  if (alpha <= 0.0 || alpha >= 1.0)
    throw DomainError("conformal_quantile: alpha must be in (0,1)");
  std::sort(residuals.begin(), residuals.end());
  const std::size_t n = residuals.size();
  const double raw = std::ceil((static_cast<double>(n) + 1.0) * (1.0 - alpha));
  const std::size_t idx = static_cast<std::size_t>(raw);  // 1-based
  if (idx > n) return residuals.back();
  return residuals[idx - 1];
}

namespace {

// One evaluation sweep over the calibration split: raw-unit residuals for
// the radii plus the normalized MSE used for early stopping.
ConformalRadii calibration_pass(ModelState& state, const WindowDataset& ds,
                                const AdjacencyBank& bank, double alpha,
                                double* val_mse_out) {
  if (ds.cal.empty())
    throw ValidationError("calibrate: empty calibration split");
  const std::size_t h = ds.horizon;
  const std::size_t n = ds.raw.cols();
  const std::size_t n_cal = ds.cal.size();

  ConformalRadii radii;
  radii.alpha = alpha;
  radii.n_cal = n_cal;
  radii.residuals.resize(n_cal * h * n);
  double mse_acc = 0.0;
  for (std::size_t t = 0; t < n_cal; ++t) {
    const WindowSample& w = ds.cal[t];
    const ad::Tensor pred = predict(input_tensor(ds, w), w.h_tag, bank, state);
    if (val_mse_out) {
      const ad::Tensor truth_norm = target_tensor(ds, w);
      double mse = 0.0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth_norm[i];
        mse += d * d;
      }
      mse_acc += mse / static_cast<double>(pred.size());
    }
    const Matrix pred_raw = denormalize(ds, pred);
    const Matrix truth = target_raw(ds, w);
    for (std::size_t k = 0; k < h; ++k)
      for (std::size_t i = 0; i < n; ++i)
        radii.residuals[(t * h + k) * n + i] =
            std::abs(pred_raw(k, i) - truth(k, i));
  }
  if (val_mse_out) *val_mse_out = mse_acc / static_cast<double>(n_cal);

  radii.coverage_warning = static_cast<double>(n_cal) < 1.0 / alpha - 1.0;
  radii.q = Matrix(h, n);
  std::vector<double> column(n_cal);
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < n_cal; ++t)
        column[t] = radii.residuals[(t * h + k) * n + i];
      radii.q(k, i) = radii.coverage_warning
                          ? *std::max_element(column.begin(), column.end())
                          : conformal_quantile(column, alpha);
    }
  return radii;
}

}  // namespace

ConformalRadii calibrate(ModelState& state, const WindowDataset& ds,
                         const AdjacencyBank& bank, double alpha) {
  return calibration_pass(state, ds, bank, alpha, nullptr);
}

Intervals intervals(const Matrix& forecast, const ConformalRadii& radii) {
  if (!forecast.same_shape(radii.q))
    throw ShapeError("intervals: forecast and radii shapes differ");
  Intervals out;
  out.lower = forecast;
  out.upper = forecast;
  for (std::size_t k = 0; k < forecast.rows(); ++k)
    for (std::size_t i = 0; i < forecast.cols(); ++i) {
      out.lower(k, i) -= radii.q(k, i);
      out.upper(k, i) += radii.q(k, i);
    }
  return out;
}

void save_radii(const ConformalRadii& radii, const StationNetwork& net,
                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError(path + ": cannot open for writing");
  out << "# alpha=" << format_double(radii.alpha) << " n_cal=" << radii.n_cal
      << "\n";
  out << "horizon";
  for (const auto& s : net.stations) out << "," << s.id;
  out << "\n";
  for (std::size_t k = 0; k < radii.q.rows(); ++k) {
    out << (k + 1);
    for (std::size_t i = 0; i < radii.q.cols(); ++i)
      out << "," << format_double(radii.q(k, i));
    out << "\n";
  }
}

ConformalRadii load_radii(const std::string& path,
                          const StationNetwork& net) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path + ": cannot open");
  std::string comment;
  if (!std::getline(in, comment) || comment.rfind("# alpha=", 0) != 0)
    throw ValidationError(path + ": missing '# alpha=... n_cal=...' header");
  ConformalRadii radii;
  {
    std::istringstream ss(comment.substr(2));
    std::string tok;
    while (ss >> tok) {
      if (tok.rfind("alpha=", 0) == 0)
        radii.alpha = parse_double(tok.substr(6), path);
      else if (tok.rfind("n_cal=", 0) == 0)
        radii.n_cal = static_cast<std::size_t>(parse_int(tok.substr(6), path));
    }
  }
  std::string header;
  std::getline(in, header);
  std::vector<std::vector<double>> values;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<double> row;
    bool first = true;
    while (std::getline(ss, field, ',')) {
      if (first) {
        first = false;
        continue;  // horizon index column
      }
      row.push_back(parse_double(field, path));
    }
    if (row.size() != net.size())
      throw ValidationError(path + ": row width does not match network");
    values.push_back(std::move(row));
  }
  if (values.empty()) throw ValidationError(path + ": no radii rows");
  radii.q = Matrix(values.size(), net.size());
  for (std::size_t k = 0; k < values.size(); ++k)
    for (std::size_t i = 0; i < net.size(); ++i) radii.q(k, i) = values[k][i];
  return radii;
}

Adam::Adam(std::vector<std::pair<std::string, ad::Var>>& params, double lr)
    : params_(&params), lr_(lr) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& [name, var] : params) {
    m_.push_back(ad::Tensor::zeros_like(var.value()));
    v_.push_back(ad::Tensor::zeros_like(var.value()));
  }
}

void Adam::zero_grad() {
  for (auto& [name, var] : *params_) {
    auto node = var.node();
    node->has_grad = false;
    node->grad = ad::Tensor();
  }
}

void Adam::step(double grad_scale) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_->size(); ++p) {
    auto node = (*params_)[p].second.node();
    ad::Tensor& value = node->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = node->has_grad ? node->grad[i] * grad_scale : 0.0;
      m_[p][i] = beta1 * m_[p][i] + (1.0 - beta1) * g;
      v_[p][i] = beta2 * v_[p][i] + (1.0 - beta2) * g * g;
      value[i] -=
          lr_ * (m_[p][i] / bc1) / (std::sqrt(v_[p][i] / bc2) + eps);
    }
  }
  zero_grad();
}

namespace {

double mean_of(const Matrix& m) {
  double acc = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) acc += m(i, j);
  return acc / static_cast<double>(m.size());
}

}  // namespace

TrainResult train(ModelState& state, const WindowDataset& ds,
                  const AdjacencyBank& bank, const TrainOptions& opts) {
  if (ds.train.empty()) throw ValidationError("train: empty training split");
  if (ds.cal.empty())
    throw ValidationError("train: empty calibration/validation split");
  if (opts.max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");

  Adam adam(state.parameters(), opts.lr);
  adam.zero_grad();

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<ad::Tensor> best_snapshot = state.snapshot();
  int stale_epochs = 0;

  std::vector<std::size_t> order(ds.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    // Deterministic per-epoch shuffle.
    rng::Engine shuffle_rng(rng::stream_seed(
        opts.seed, {0x65706f63u, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double epoch_loss = 0.0;
    std::size_t batch_fill = 0;
    for (std::size_t wi = 0; wi < order.size(); ++wi) {
      const WindowSample& w = ds.train[order[wi]];
      const std::uint64_t drop_seed = rng::stream_seed(
          opts.seed, {0x64726f70u, static_cast<std::uint64_t>(epoch), w.start});
      const ad::Var pred = forward(input_tensor(ds, w), w.h_tag, bank, state,
                                   /*train_mode=*/true, drop_seed);
      const ad::Var loss =
          ad::mse_loss(pred, ad::constant(target_tensor(ds, w)));
      const double loss_val = loss.value()[0];
      if (!std::isfinite(loss_val))
        throw std::runtime_error(
            "train: diverged (non-finite loss) at epoch " +
            std::to_string(epoch + 1) + ", window start " +
            std::to_string(w.start));
      epoch_loss += loss_val;
      ad::backward(loss);
      ++batch_fill;
      if (batch_fill == opts.batch_size || wi + 1 == order.size()) {
        adam.step(1.0 / static_cast<double>(batch_fill));
        batch_fill = 0;
      }
    }

    EpochStats stats;
    stats.train_mse = epoch_loss / static_cast<double>(ds.train.size());
    if (opts.acp) {
      // Epoch-wise adaptive recalibration on the held-out split; the same
      // sweep supplies the early-stopping validation loss.
      const ConformalRadii epoch_radii =
          calibration_pass(state, ds, bank, opts.alpha, &stats.val_mse);
      stats.mean_radius = mean_of(epoch_radii.q);
    } else {
      double acc = 0.0;
      for (const WindowSample& w : ds.cal) {
        const ad::Tensor pred =
            predict(input_tensor(ds, w), w.h_tag, bank, state);
        const ad::Tensor truth = target_tensor(ds, w);
        double mse = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
          const double d = pred[i] - truth[i];
          mse += d * d;
        }
        acc += mse / static_cast<double>(pred.size());
      }
      stats.val_mse = acc / static_cast<double>(ds.cal.size());
    }
    result.history.push_back(stats);

    if (stats.val_mse < best_val) {
      best_val = stats.val_mse;
      best_snapshot = state.snapshot();
      result.best_epoch = epoch;
      stale_epochs = 0;
    } else {
      ++stale_epochs;
      if (stale_epochs >= opts.patience) break;
    }
  }

  // Return the best-validation checkpoint with radii computed on it.
  state.restore(best_snapshot);
  result.radii = calibrate(state, ds, bank, opts.alpha);
  return result;
}

}  // namespace flowcast
