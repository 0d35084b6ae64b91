#pragma once

#include <array>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dcnid/lpm.hpp"
#include "dcnid/netmodel.hpp"

namespace dcnid {

/// theta = [theta_a; theta_b; theta_c].
///   theta_a: i = 0..L-1, j = i..L-1, l = 0..n_a (upper triangle of A)
///   theta_b: i = 0..L-1, x = 0..K-1, l = 0..n_b
///   theta_c: i = 0..L-1, l = 0..n_c
struct ParamLayout {
  int L = 0, K = 0, n_a = 2, n_b = 1, n_c = 1;

  ParamLayout() = default;
  ParamLayout(int L_, int K_, int na, int nb, int nc) : L(L_), K(K_), n_a(na), n_b(nb), n_c(nc) {}

  int size_a() const { return L * (L + 1) / 2 * (n_a + 1); }
  int size_b() const { return L * K * (n_b + 1); }
  int size_c() const { return L * (n_c + 1); }
  int size() const { return size_a() + size_b() + size_c(); }

  int index_a(int i, int j, int l) const;  // symmetric in (i, j)
  int index_b(int i, int x, int l) const { return size_a() + (i * K + x) * (n_b + 1) + l; }
  int index_c(int i, int l) const { return size_a() + size_b() + i * (n_c + 1) + l; }

  enum class Block { A, B, C };
  struct Coord {
    Block block;
    int i, j, l;  // j is the partner node (A) or excitation (B); unused for C
  };
  Coord coord(int idx) const;

  Eigen::VectorXd pack(const PolynomialMatrix& A, const PolynomialMatrix& B, const PolynomialMatrix& C) const;
  Eigen::VectorXd pack(const DCNModel& m) const { return pack(m.A, m.B, m.C); }
  /// Model with A, B, C filled from theta; topology left empty.
  DCNModel unpack(const Eigen::VectorXd& theta) const;
};

/// Linear equality constraints Gamma theta = upsilon.
struct ConstraintSet {
  Eigen::MatrixXd Gamma;
  Eigen::VectorXd upsilon;

  int rows() const { return static_cast<int>(Gamma.rows()); }
  /// Coordinates not touched by any row.
  std::vector<bool> free_mask() const;
  /// Max |Gamma theta - upsilon|.
  double violation(const Eigen::VectorXd& theta) const;
};

/// theta_a indices that the design network forces to zero: all orders of
/// absent edges, and orders with no corresponding component on present
/// edges or in a node's diagonal.
std::vector<int> design_zero_a(const ParamLayout& layout, const Topology& topology,
                               const std::vector<std::vector<std::array<bool, 3>>>& order_present);
std::vector<std::vector<std::array<bool, 3>>> design_orders(const RLCNetwork& design);

/// Pins every B coefficient to B_known, every listed theta_a index to zero,
/// and each (index, value) in known. Duplicates are dropped; conflicting
/// duplicates, rank deficiency or an all-zero upsilon throw InvalidConstraints.
ConstraintSet build_constraints(const ParamLayout& layout, const PolynomialMatrix& B_known,
                                const std::vector<int>& zero_a,
                                const std::vector<std::pair<int, double>>& known = {});

/// Stacks general rows and checks rank / nonzero upsilon.
ConstraintSet finalize_constraints(std::vector<Eigen::VectorXd> rows, std::vector<double> values);

/// Cholesky factor (lower) of the PSD-repaired covariance.
Eigen::MatrixXcd weight_factor(const Eigen::MatrixXcd& Cw, double floor);

/// W(k) = (A_prev Lc)^-1 with Lc the lower Cholesky factor of the repaired
/// Cw, i.e. Lc^-1 A_prev^-1. Throws SingularWeight when cond > 1e13.
Eigen::MatrixXcd build_weight(const Eigen::MatrixXcd& Cw, const Eigen::MatrixXcd& A_prev, double floor = 0.0);

/// Q(k) with Q(k) theta = W(k) (A W_hat - B R - C) at one bin.
Eigen::MatrixXcd build_regressor(const Eigen::VectorXcd& W_hat, const Eigen::VectorXcd& Rk,
                                 const Eigen::MatrixXcd& weight, cplx Omega, const ParamLayout& layout);
/// Frequencies stacked, L rows each.
Eigen::MatrixXcd build_regressor(const SpectralDataset& ds, const NonparamEstimate& np, const ParamLayout& layout,
                                 const std::vector<Eigen::MatrixXcd>& weights);

struct KktSolution {
  Eigen::VectorXd theta;
  Eigen::VectorXd lambda;
};

/// Solves [2H, G^T; G, 0][theta; lambda] = [0; upsilon] with H = Re(Q^H Q).
KktSolution kkt_solve(const Eigen::MatrixXd& H, const ConstraintSet& cs);
KktSolution kkt_solve(const Eigen::MatrixXcd& Q, const ConstraintSet& cs);

/// min ||X theta|| s.t. Gamma theta = upsilon by null-space elimination and a
/// column-pivoted QR of the column-scaled X. Never forms X^T X, so it copes
/// with high-order monomial regressors; rank-deficient directions get a basic
/// solution instead of an error.
Eigen::VectorXd constrained_lsq(const Eigen::MatrixXd& X, const ConstraintSet& cs);

struct SkSettings {
  int max_iter = 50;
  double rel_tol = 1e-6;
  /// Floor for Cw eigenvalues, relative to the band-average per-channel variance.
  double epsilon_w = 1e-10;
  /// Solve each step with constrained_lsq on the stacked regressor instead of
  /// the normal-equation KKT system.
  bool use_qr = false;
};

struct SkIteration {
  int iter;
  double residual;
  double max_change;
};

struct SkResult {
  Eigen::VectorXd theta;
  std::vector<SkIteration> history;
  bool converged = false;
};

/// Absolute eigenvalue floor used for all weightings of one estimate.
double weight_floor(const NonparamEstimate& np, double epsilon_w);

SkResult sk_identify(const SpectralDataset& ds, const NonparamEstimate& np, const ParamLayout& layout,
                     const ConstraintSet& cs, const SkSettings& settings = {});

}  // namespace dcnid
