#pragma once

#include <array>
#include <string>

#include "flowcast/incident.hpp"
#include "flowcast/matrix.hpp"
#include "flowcast/travel_time.hpp"

namespace flowcast {

struct AdjacencyParams {
  double sigma_sq = 0.1;  // Gaussian kernel width
  double rho_max = 0.8;   // correlation clip bound
};

// Hour-conditioned, incident-aware adjacency bank: risk-coupled effective
// travel times pushed through a Gaussian kernel and the availability mask.
struct AdjacencyBank {
  Matrix rho;                        // N x N, clipped correlations
  std::array<Matrix, 24> t_eff;      // effective travel times, minutes
  std::array<Matrix, 24> a_raw;      // kernel weights in (0, 1]
  std::array<Matrix, 24> a_adaptive; // masked weights in [0, 1]
  AdjacencyParams params;
};

// Pearson correlation over the 24 hourly samples between each edge's travel
// time and its endpoint risk sum, clipped to [-rho_max, rho_max]. A constant
// series on either side yields 0.
Matrix edge_correlations(const TravelTimeBank& bank, const RiskField& field,
                         double rho_max);

// t_eff = T_h * (1 + rho * edge_risk), floored at 0.01 * t_mean so the
// kernel argument stays positive.
std::array<Matrix, 24> effective_travel_times(const TravelTimeBank& bank,
                                              const Matrix& rho,
                                              const RiskField& field);

// Per hour: A = exp(-(t_eff / (T_max + eps))^2 / (2 sigma_sq)), with T_max
// the hour's maximum effective time over off-diagonal pairs.
std::array<Matrix, 24> kernel_adjacency(const std::array<Matrix, 24>& t_eff,
                                        double sigma_sq);

std::array<Matrix, 24> apply_availability(const std::array<Matrix, 24>& a_raw,
                                          const StationNetwork& net);

// RowNorm(a + I): each row divided by its sum plus eps. The self-loop keeps
// every row sum positive. eps defaults well below the 1e-9 row-sum
// tolerance the bank contract promises.
Matrix row_normalize(const Matrix& a, double eps = 1e-12);

// Full construction. zero_rho builds the crash-free reference bank from the
// same sampled travel times (rho forced to 0 instead of an empty crash
// table, so both banks share sampling noise).
AdjacencyBank build_adjacency(const TravelTimeBank& bank,
                              const RiskField& field,
                              const StationNetwork& net,
                              const AdjacencyParams& params,
                              bool zero_rho = false);

// A_crash(h) - A_base(h) on the masked matrices; diagonal reported as 0.
Matrix adjacency_delta(const AdjacencyBank& crash_bank,
                       const AdjacencyBank& base_bank, int hour);

// Directory export mirrors the travel-time bank layout, adding rho.csv and
// a_adaptive_hXX.csv (t_eff_hXX.csv included for audit).
void export_adjacency(const AdjacencyBank& bank, const StationNetwork& net,
                      const std::string& dir);
AdjacencyBank load_adjacency(const std::string& dir,
                             const StationNetwork& net);

}  // namespace flowcast
