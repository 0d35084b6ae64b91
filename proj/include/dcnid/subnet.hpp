#pragma once

#include <vector>

#include <Eigen/Dense>

#include "dcnid/smle.hpp"

namespace dcnid {

/// Node partition: target J, neighbours D, immersed I (0-based, sorted).
/// Measured signals are ordered J then D.
struct Partition {
  std::vector<int> J, D, I;

  std::vector<int> M() const;
  /// Throws InvalidPartition unless J, D, I cover the nodes disjointly, J is
  /// nonempty, and no edge joins J and I.
  void check(const Topology& topology) const;
  /// Only the covering/disjointness part of check(); enough for Kron reduction.
  void check_cover(int L) const;
};

struct ImmersedModel {
  PolynomialMatrix A_im;  // |M| x |M|
  PolynomialMatrix B_im;  // |M| x K
  PolynomialMatrix C_im;  // |M| x 1
  Polynomial d_II;
};

/// A_im = d A_MM - A_MI adj(A_II) A_IM (same for B and C) with d = det(A_II),
/// then all entries and d are divided by their common GCD. Any covering
/// partition works here; the J-I adjacency rule matters only for recovery.
ImmersedModel kron_reduce(const DCNModel& model, const Partition& part, double gcd_tol = kGcdTol);

/// Lowest orders (n_a_im, n_b_im) that contain the exact reduction of `design`.
std::pair<int, int> immersed_orders(const DCNModel& design, const Partition& part);

/// Structural pins for the immersed model: the excitation coefficient that
/// maps b_{jx,1} (lowest order of the excited J row) is set to `pin_value`,
/// every other coefficient of B_im that the original network forces to zero
/// is pinned to zero, and J-M pairs without an original edge get zero rows.
/// With `pin_support`, every A_im/B_im coefficient that is exactly zero in
/// kron_reduce(design) is pinned as well; without it the exact-order model has
/// a null space whenever only one node is excited.
ConstraintSet immersed_constraints(const ParamLayout& lay, const Partition& part, const DCNModel& original_design,
                                   double pin_value = 1.0, bool pin_support = true);

struct ImmersedFit {
  ParamLayout layout;
  NonparamEstimate np;
  SkResult sk;
  SmleResult smle;
  Eigen::VectorXd eta;
};

/// LPM -> SK -> SMLE on the measured channels with the immersed layout.
ImmersedFit identify_immersed(const SpectralDataset& ds_measured, const ParamLayout& lay, const ConstraintSet& cs,
                              const LpmSettings& lpm, const SkSettings& sk, const GnSettings& gn, bool refine = true);

/// Maximum-likelihood refinement of an immersed estimate in the factored form
/// the immersion actually has. J touches no immersed node, so rows J of A_im
/// and B_im are d(p) times the original rows: those rows are parameterised by
/// the coefficients of d and of the subnetwork polynomials (design support
/// only), while the D-D block, excitation columns entering I and C stay free.
/// The unstructured parameterisation has nearly flat directions that move the
/// recovered components without changing the fit; this one does not.
struct StructuredFit {
  Eigen::VectorXd eta;  // in the immersed layout; satisfies the immersed constraints
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<double> accepted_costs;
  int iterations = 0;
  bool converged = false;
  bool nominal_start = false;  // the better optimum came from the design start
};

/// Starts from eta0 and, when `try_nominal`, also from the scaled design
/// reduction; keeps the lower cost. `design` supplies topology/orders.
StructuredFit structured_refine(const Eigen::VectorXd& eta0, const SpectralDataset& ds, const NonparamEstimate& np,
                                const ParamLayout& lay, const ConstraintSet& cs, const Partition& part,
                                const RLCNetwork& design, const GnSettings& gn = {}, bool try_nominal = true);

/// theta_1 = [A_JJ (i, m, l) row-major; A_JD (m, j, l); B_J (m, x, l)].
struct SubnetLayout {
  int LJ = 0, LD = 0, K = 0, n_a = 2, n_b = 1;

  int size_jj() const { return LJ * LJ * (n_a + 1); }
  int size_jd() const { return LJ * LD * (n_a + 1); }
  int size_b() const { return LJ * K * (n_b + 1); }
  int size() const { return size_jj() + size_jd() + size_b(); }
  int idx_jj(int i, int m, int l) const { return (i * LJ + m) * (n_a + 1) + l; }
  int idx_jd(int m, int j, int l) const { return size_jj() + (m * LD + j) * (n_a + 1) + l; }
  int idx_b(int m, int x, int l) const { return size_jj() + size_jd() + (m * K + x) * (n_b + 1) + l; }
};

/// Rows vec(M3) (L_J x L_D, row-major) then vec(M4) (L_J x K) at one bin, for
/// M3 = A_JJ Â_JD - Â_JJ A_JD and M4 = A_JJ B̂_J - Â_JJ B_J.
Eigen::MatrixXcd build_Q1(const Eigen::MatrixXcd& Ajj_hat, const Eigen::MatrixXcd& Ajd_hat,
                          const Eigen::MatrixXcd& Bj_hat, cplx Omega, const SubnetLayout& lay);
/// Stacked over the grid, with the hats taken from the immersed estimate.
Eigen::MatrixXcd build_Q1(const DCNModel& immersed, const Eigen::VectorXd& omega, const SubnetLayout& lay);

/// Symmetry rows for A_JJ, zero rows for pairs/orders absent from the design,
/// and every B_J coefficient pinned to the original B.
ConstraintSet subnet_constraints(const SubnetLayout& lay, const Partition& part, const RLCNetwork& design,
                                 const PolynomialMatrix& B_original);

struct SubnetEstimate {
  Eigen::VectorXd theta1;
  PolynomialMatrix A_JJ, A_JD, B_J;
};

SubnetEstimate recover_subnet(const DCNModel& immersed, const Eigen::VectorXd& omega, const SubnetLayout& lay,
                              const ConstraintSet& cs);
SubnetEstimate unpack_subnet(const Eigen::VectorXd& theta1, const SubnetLayout& lay);

/// Components located in the target subnetwork (J-J and J-D couplings present
/// in the design, and grounded elements of J), in canonical order.
std::vector<ComponentSlot> subnet_component_layout(const RLCNetwork& design, const Partition& part);
double slot_coefficient(const SubnetEstimate& est, const Partition& part, const ComponentSlot& slot);
std::vector<ComponentEstimate> subnet_components(const SubnetEstimate& est, const Partition& part,
                                                 const std::vector<ComponentSlot>& layout,
                                                 const ComponentOptions& opt = {});

}  // namespace dcnid
