#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowcast/adjacency.hpp"
#include "flowcast/data.hpp"
#include "flowcast/model.hpp"

namespace flowcast {

struct WindowSample {
  std::size_t start = 0;  // first input step
  int h_tag = 0;          // hour of the last input step
};

struct Normalization {
  std::vector<double> mean, std;  // per node, from the training split
};

struct SplitSpec {
  double train_frac = 0.70;
  double cal_frac = 0.15;  // calibration doubles as the early-stop set
  // remainder is test
};

// Sliding stride-1 windows over z-scored flows. Windows never straddle the
// chronological split boundaries; normalization statistics come from the
// training step range only.
struct WindowDataset {
  std::size_t window_len = 0, horizon = 0;
  Normalization norm;
  Matrix normalized;  // T x N
  Matrix raw;         // T x N original units
  std::vector<Minutes> timestamps;
  std::vector<WindowSample> train, cal, test;
};

WindowDataset make_windows(const FlowSeries& flows, std::size_t window_len,
                           std::size_t horizon, const SplitSpec& splits);

ad::Tensor input_tensor(const WindowDataset& ds, const WindowSample& w);
ad::Tensor target_tensor(const WindowDataset& ds, const WindowSample& w);
Matrix target_raw(const WindowDataset& ds, const WindowSample& w);
// Per-node de-normalization of an H x N normalized forecast.
Matrix denormalize(const WindowDataset& ds, const ad::Tensor& pred_norm);

// Per-horizon, per-node split-conformal interval radii in raw flow units.
struct ConformalRadii {
  Matrix q;  // H x N
  double alpha = 0.1;
  std::size_t n_cal = 0;
  bool coverage_warning = false;  // n_cal too small for nominal coverage
  // Flattened |residuals|, index (t * H + k) * N + i; kept for audit.
  std::vector<double> residuals;
};

// Order statistic ceil((n+1)(1-alpha)) of the residuals; max residual when
// the index exceeds n.
double conformal_quantile(std::vector<double> residuals, double alpha);

ConformalRadii calibrate(ModelState& state, const WindowDataset& ds,
                         const AdjacencyBank& bank, double alpha);

struct Intervals {
  Matrix lower, upper;  // H x N
};

Intervals intervals(const Matrix& forecast, const ConformalRadii& radii);

void save_radii(const ConformalRadii& radii, const StationNetwork& net,
                const std::string& path);
ConformalRadii load_radii(const std::string& path, const StationNetwork& net);

// Adam over the model's parameter list. step() consumes and clears the
// accumulated gradients.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, ad::Var>>& params, double lr);
  void step(double grad_scale = 1.0);
  void zero_grad();

 private:
  std::vector<std::pair<std::string, ad::Var>>* params_;
  double lr_;
  long long t_ = 0;
  std::vector<ad::Tensor> m_, v_;
};

struct TrainOptions {
  double lr = 1e-3;
  int patience = 10;
  int max_epochs = 20;
  std::size_t batch_size = 32;
  double alpha = 0.1;
  bool acp = true;  // epoch-wise recalibration; false = split-CP at the end
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct EpochStats {
  double train_mse = 0.0;  // normalized units
  double val_mse = 0.0;
  double mean_radius = 0.0;  // 0 when not recalibrated this epoch
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = 0;  // checkpoint with minimum validation MSE
  ConformalRadii radii;
};

// Mini-batch Adam on train-window MSE with early stopping on the
// calibration split. Restores the best-validation checkpoint and computes
// the final radii on it. Throws on divergence (non-finite loss).
TrainResult train(ModelState& state, const WindowDataset& ds,
                  const AdjacencyBank& bank, const TrainOptions& opts);

}  // namespace flowcast
