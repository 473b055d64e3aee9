#include "flowcast/adjacency.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "flowcast/common.hpp"

namespace flowcast {

Matrix edge_correlations(const TravelTimeBank& bank, const RiskField& field,
                         double rho_max) {
  const std::size_t n = bank.t_mean.rows();
  Matrix rho(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double mx = 0, my = 0;
      for (int h = 0; h < 24; ++h) {
        mx += bank.banks[h](i, j);
        my += field.edge_risk(h, i, j);
      }
      mx /= 24.0;
      my /= 24.0;
      double vx = 0, vy = 0, cov = 0;
      for (int h = 0; h < 24; ++h) {
        const double dx = bank.banks[h](i, j) - mx;
        const double dy = field.edge_risk(h, i, j) - my;
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
      }
      // A numerically constant series has no defined correlation.
      if (vx <= 1e-20 * (1.0 + mx * mx) || vy <= 1e-20 * (1.0 + my * my)) {
        rho(i, j) = 0.0;
      } else {
        rho(i, j) = std::clamp(cov / std::sqrt(vx * vy), -rho_max, rho_max);
      }
    }
  }
  return rho;
}

std::array<Matrix, 24> effective_travel_times(const TravelTimeBank& bank,
                                              const Matrix& rho,
                                              const RiskField& field) {
  const std::size_t n = bank.t_mean.rows();
  std::array<Matrix, 24> t_eff;
  for (int h = 0; h < 24; ++h) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double raw =
            bank.banks[h](i, j) * (1.0 + rho(i, j) * field.edge_risk(h, i, j));
        m(i, j) = std::max(raw, 0.01 * bank.t_mean(i, j));
      }
    t_eff[h] = std::move(m);
  }
  return t_eff;
}

std::array<Matrix, 24> kernel_adjacency(const std::array<Matrix, 24>& t_eff,
                                        double sigma_sq) {
  if (sigma_sq <= 0.0)
    throw DomainError("kernel_adjacency: sigma_sq must be positive");
  const std::size_t n = t_eff[0].rows();
  std::array<Matrix, 24> a_raw;
  for (int h = 0; h < 24; ++h) {
    double t_max = 0.0;  // diagonal self-times excluded
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) t_max = std::max(t_max, t_eff[h](i, j));
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double ratio = t_eff[h](i, j) / (t_max + kEps);
        m(i, j) = std::exp(-ratio * ratio / (2.0 * sigma_sq));
      }
    a_raw[h] = std::move(m);
  }
  return a_raw;
}

std::array<Matrix, 24> apply_availability(const std::array<Matrix, 24>& a_raw,
                                          const StationNetwork& net) {
  const std::size_t n = net.size();
  if (a_raw[0].rows() != n)
    throw ShapeError("apply_availability: adjacency size " +
                     std::to_string(a_raw[0].rows()) +
                     " does not match network size " + std::to_string(n));
  std::array<Matrix, 24> out;
  for (int h = 0; h < 24; ++h) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        m(i, j) = a_raw[h](i, j) * net.avail_mask(i, j);
    out[h] = std::move(m);
  }
  return out;
}

Matrix row_normalize(const Matrix& a, double eps) {
  const std::size_t n = a.rows();
  Matrix out(n, a.cols());
  for (std::size_t i = 0; i < n; ++i) {
    double sum = eps;
    for (std::size_t j = 0; j < a.cols(); ++j)
      sum += a(i, j) + (i == j ? 1.0 : 0.0);
    for (std::size_t j = 0; j < a.cols(); ++j)
      out(i, j) = (a(i, j) + (i == j ? 1.0 : 0.0)) / sum;
  }
  return out;
}

AdjacencyBank build_adjacency(const TravelTimeBank& bank,
                              const RiskField& field,
                              const StationNetwork& net,
                              const AdjacencyParams& params,
                              bool zero_rho) {
  AdjacencyBank out;
  out.params = params;
  out.rho = zero_rho ? Matrix(bank.t_mean.rows(), bank.t_mean.cols())
                     : edge_correlations(bank, field, params.rho_max);
  out.t_eff = effective_travel_times(bank, out.rho, field);
  out.a_raw = kernel_adjacency(out.t_eff, params.sigma_sq);
  out.a_adaptive = apply_availability(out.a_raw, net);
  return out;
}

Matrix adjacency_delta(const AdjacencyBank& crash_bank,
                       const AdjacencyBank& base_bank, int hour) {
  if (hour < 0 || hour > 23)
    throw DomainError("adjacency_delta: hour must be in 0..23, got " +
                      std::to_string(hour));
  const Matrix& a = crash_bank.a_adaptive[hour];
  const Matrix& b = base_bank.a_adaptive[hour];
  Matrix delta(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      delta(i, j) = i == j ? 0.0 : a(i, j) - b(i, j);
  return delta;
}

namespace {

std::string hour_file(const std::string& stem, int h) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%s_h%02d.csv", stem.c_str(), h);
  return buf;
}

}  // namespace

void export_adjacency(const AdjacencyBank& bank, const StationNetwork& net,
                      const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_matrix_csv(bank.rho, net, dir + "/rho.csv");
  for (int h = 0; h < 24; ++h) {
    write_matrix_csv(bank.t_eff[h], net, dir + "/" + hour_file("t_eff", h));
    write_matrix_csv(bank.a_adaptive[h], net,
                     dir + "/" + hour_file("a_adaptive", h));
  }
  nlohmann::ordered_json meta;
  meta["sigma_sq"] = bank.params.sigma_sq;
  meta["rho_max"] = bank.params.rho_max;
  std::ofstream out(dir + "/adjacency_meta.json");
  out << meta.dump(2) << "\n";
}

AdjacencyBank load_adjacency(const std::string& dir,
                             const StationNetwork& net) {
  AdjacencyBank bank;
  bank.rho = read_matrix_csv(dir + "/rho.csv", net);
  for (int h = 0; h < 24; ++h) {
    bank.t_eff[h] = read_matrix_csv(dir + "/" + hour_file("t_eff", h), net);
    bank.a_adaptive[h] =
        read_matrix_csv(dir + "/" + hour_file("a_adaptive", h), net);
  }
  // a_raw (pre-mask kernel weights) is construction-time only, not persisted.
  std::ifstream in(dir + "/adjacency_meta.json");
  if (!in) throw ValidationError(dir + "/adjacency_meta.json: cannot open");
  nlohmann::json meta = nlohmann::json::parse(in);
  bank.params.sigma_sq = meta.at("sigma_sq").get<double>();
  bank.params.rho_max = meta.at("rho_max").get<double>();
  return bank;
}

}  // namespace flowcast
