#pragma once

#include <vector>

#include <Eigen/Dense>

#include "dcnid/structest.hpp"

namespace dcnid {

struct GnSettings {
  int max_iter = 100;
  double rel_cost_tol = 1e-9;
  double lambda0 = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  double lambda_max = 1e12;
  double epsilon_w = 1e-10;  // same meaning as SkSettings::epsilon_w
  /// Levenberg-Marquardt steps from a QR of the Jacobian rather than J^T J.
  bool use_qr = false;
};

struct SmleCost {
  double cost = 0.0;
  Eigen::VectorXd residuals;  // [Re; Im] of M2(k), stacked over k
};

/// Precomputed inverse Cholesky factors Lc(k)^-1 of the repaired Cw(k).
std::vector<Eigen::MatrixXcd> inverse_weight_factors(const NonparamEstimate& np, double epsilon_w);

/// cost = mean_k ||Lc^-1 (W_hat - A^-1 (B R + C))||^2; +inf when A is
/// numerically singular at some bin.
SmleCost smle_cost(const Eigen::VectorXd& theta, const SpectralDataset& ds, const NonparamEstimate& np,
                   const ParamLayout& layout, double epsilon_w = 1e-10);

struct SmleIteration {
  int iter;
  double cost;
  double lambda;
  double step_norm;
};

struct SmleResult {
  Eigen::VectorXd theta;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<double> accepted_costs;  // starts with the initial cost
  std::vector<SmleIteration> history;
  bool converged = false;
};

/// Forward-difference Jacobian on the free coordinates, in the scaled
/// variables x_j = theta_j / s_j used by smle_refine.
Eigen::MatrixXd smle_jacobian(const Eigen::VectorXd& theta, const std::vector<int>& free_idx,
                              const Eigen::VectorXd& scale, const SpectralDataset& ds,
                              const NonparamEstimate& np, const ParamLayout& layout, double epsilon_w = 1e-10);

/// Per-coordinate scale: median |theta0| over free coordinates of the same
/// block and order (1 when all are zero).
Eigen::VectorXd smle_scales(const Eigen::VectorXd& theta0, const std::vector<int>& free_idx, const ParamLayout& layout);

SmleResult smle_refine(const Eigen::VectorXd& theta0, const std::vector<bool>& free_mask, const SpectralDataset& ds,
                       const NonparamEstimate& np, const ParamLayout& layout, const GnSettings& settings = {});

}  // namespace dcnid
