#include "dcnid/structest.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dcnid/errors.hpp"

namespace dcnid {

namespace {

constexpr double kMaxWeightCond = 1e13;

std::vector<cplx> powers(cplx om, int n) {
  std::vector<cplx> p(n + 1);
  p[0] = 1.0;
  for (int l = 1; l <= n; ++l) p[l] = p[l - 1] * om;
  return p;
}

void fill_regressor(const Eigen::VectorXcd& W_hat, const Eigen::VectorXcd& Rk, const Eigen::MatrixXcd& Wt,
                    cplx Omega, const ParamLayout& lay, Eigen::MatrixXcd& Q) {
  const int L = lay.L;
  Q.resize(L, lay.size());
  const auto pw = powers(Omega, std::max({lay.n_a, lay.n_b, lay.n_c}));
  int col = 0;
  Eigen::VectorXcd base(L);
  for (int i = 0; i < L; ++i)
    for (int j = i; j < L; ++j) {
      if (i == j)
        base = Wt.col(i) * W_hat(i);
      else
        base = Wt.col(i) * W_hat(j) + Wt.col(j) * W_hat(i);
      for (int l = 0; l <= lay.n_a; ++l) Q.col(col++) = pw[l] * base;
    }
  for (int i = 0; i < L; ++i)
    for (int x = 0; x < lay.K; ++x) {
      base = -Wt.col(i) * Rk(x);
      for (int l = 0; l <= lay.n_b; ++l) Q.col(col++) = pw[l] * base;
    }
  for (int i = 0; i < L; ++i)
    for (int l = 0; l <= lay.n_c; ++l) Q.col(col++) = -pw[l] * Wt.col(i);
}

Eigen::MatrixXcd weight_from_factor(const Eigen::MatrixXcd& Lc, const Eigen::MatrixXcd& A_prev) {
  const Eigen::MatrixXcd M = A_prev * Lc;
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(M);
  const double rc = lu_rcond(lu);
  if (!(rc > 1.0 / kMaxWeightCond)) throw SingularWeight("weighting matrix condition number exceeds 1e13");
  return lu.inverse();
}

// Coordinates pinned to zero by single-entry rows are exactly zero in every
// solution; dropping them shrinks the normal equations without changing the
// estimate.
struct Reduction {
  std::vector<int> active;
  ConstraintSet cs;
};

Reduction reduce(const ConstraintSet& cs, int P) {
  std::vector<bool> zero_pinned(P, false);
  std::vector<int> keep_rows;
  for (int r = 0; r < cs.rows(); ++r) {
    int nz = 0, at = -1;
    for (int c = 0; c < P; ++c)
      if (cs.Gamma(r, c) != 0.0) {
        ++nz;
        at = c;
      }
    if (nz == 1 && cs.upsilon(r) == 0.0)
      zero_pinned[at] = true;
    else
      keep_rows.push_back(r);
  }
  Reduction red;
  for (int c = 0; c < P; ++c)
    if (!zero_pinned[c]) red.active.push_back(c);
  const int Pa = static_cast<int>(red.active.size());
  red.cs.Gamma.resize(static_cast<Eigen::Index>(keep_rows.size()), Pa);
  red.cs.upsilon.resize(static_cast<Eigen::Index>(keep_rows.size()));
  for (size_t r = 0; r < keep_rows.size(); ++r) {
    for (int c = 0; c < Pa; ++c) red.cs.Gamma(r, c) = cs.Gamma(keep_rows[r], red.active[c]);
    red.cs.upsilon(r) = cs.upsilon(keep_rows[r]);
  }
  return red;
}

}  // namespace

int ParamLayout::index_a(int i, int j, int l) const {
  if (i > j) std::swap(i, j);
  const int pair = i * L - i * (i - 1) / 2 + (j - i);
  return pair * (n_a + 1) + l;
}

ParamLayout::Coord ParamLayout::coord(int idx) const {
  if (idx < size_a()) {
    int pair = idx / (n_a + 1);
    const int l = idx % (n_a + 1);
    for (int i = 0; i < L; ++i) {
      const int row = L - i;
      if (pair < row) return {Block::A, i, i + pair, l};
      pair -= row;
    }
  }
  idx -= size_a();
  if (idx < size_b()) {
    const int l = idx % (n_b + 1);
    const int ix = idx / (n_b + 1);
    return {Block::B, ix / K, ix % K, l};
  }
  idx -= size_b();
  return {Block::C, idx / (n_c + 1), 0, idx % (n_c + 1)};
}

Eigen::VectorXd ParamLayout::pack(const PolynomialMatrix& A, const PolynomialMatrix& B,
                                  const PolynomialMatrix& C) const {
  if (A.rows() != L || A.cols() != L || B.rows() != L || B.cols() != K)
    throw DimensionMismatch("model dimensions do not match the parameter layout");
  if (A.max_order() > n_a || B.max_order() > n_b || (!C.empty() && C.max_order() > n_c))
    throw DimensionMismatch("model orders exceed the parameter layout");
  Eigen::VectorXd th = Eigen::VectorXd::Zero(size());
  for (int i = 0; i < L; ++i)
    for (int j = i; j < L; ++j)
      for (int l = 0; l <= n_a; ++l) th(index_a(i, j, l)) = A(i, j).coeff(l);
  for (int i = 0; i < L; ++i)
    for (int x = 0; x < K; ++x)
      for (int l = 0; l <= n_b; ++l) th(index_b(i, x, l)) = B(i, x).coeff(l);
  if (!C.empty())
    for (int i = 0; i < L; ++i)
      for (int l = 0; l <= n_c; ++l) th(index_c(i, l)) = C(i, 0).coeff(l);
  return th;
}

DCNModel ParamLayout::unpack(const Eigen::VectorXd& theta) const {
  if (theta.size() != size()) throw DimensionMismatch("theta length does not match the layout");
  DCNModel m;
  m.A = PolynomialMatrix(L, L);
  m.B = PolynomialMatrix(L, K);
  m.C = PolynomialMatrix(L, 1);
  m.F = PolynomialMatrix::identity(L);
  m.n_a = n_a;
  m.n_b = n_b;
  m.n_c = n_c;
  std::vector<double> c;
  for (int i = 0; i < L; ++i)
    for (int j = i; j < L; ++j) {
      c.assign(n_a + 1, 0.0);
      for (int l = 0; l <= n_a; ++l) c[l] = theta(index_a(i, j, l));
      m.A(i, j) = Polynomial(c);
      m.A(j, i) = m.A(i, j);
    }
  for (int i = 0; i < L; ++i)
    for (int x = 0; x < K; ++x) {
      c.assign(n_b + 1, 0.0);
      for (int l = 0; l <= n_b; ++l) c[l] = theta(index_b(i, x, l));
      m.B(i, x) = Polynomial(c);
    }
  for (int i = 0; i < L; ++i) {
    c.assign(n_c + 1, 0.0);
    for (int l = 0; l <= n_c; ++l) c[l] = theta(index_c(i, l));
    m.C(i, 0) = Polynomial(c);
  }
  return m;
}

std::vector<bool> ConstraintSet::free_mask() const {
  std::vector<bool> f(Gamma.cols(), true);
  for (Eigen::Index r = 0; r < Gamma.rows(); ++r)
    for (Eigen::Index c = 0; c < Gamma.cols(); ++c)
      if (Gamma(r, c) != 0.0) f[c] = false;
  return f;
}

double ConstraintSet::violation(const Eigen::VectorXd& theta) const {
  if (Gamma.rows() == 0) return 0.0;
  return (Gamma * theta - upsilon).cwiseAbs().maxCoeff();
}

std::vector<std::vector<std::array<bool, 3>>> design_orders(const RLCNetwork& design) {
  const int L = design.nodes;
  std::vector<std::vector<std::array<bool, 3>>> present(L, std::vector<std::array<bool, 3>>(L, {false, false, false}));
  for (int j = 0; j < L; ++j) {
    const auto& g = design.grounded[j];
    present[j][j] = {bool(g.L), bool(g.R), bool(g.C)};
  }
  for (const auto& e : design.edges) {
    const std::array<bool, 3> o = {bool(e.L), bool(e.R), bool(e.C)};
    for (int l = 0; l < 3; ++l)
      if (o[l]) present[e.j][e.k][l] = present[e.k][e.j][l] = present[e.j][e.j][l] = present[e.k][e.k][l] = true;
  }
  return present;
}

std::vector<int> design_zero_a(const ParamLayout& layout, const Topology& topology,
                               const std::vector<std::vector<std::array<bool, 3>>>& order_present) {
  std::vector<int> out;
  const bool have_orders = !order_present.empty();
  for (int i = 0; i < layout.L; ++i)
    for (int j = i; j < layout.L; ++j)
      for (int l = 0; l <= layout.n_a; ++l) {
        bool zero = false;
        if (i != j && !topology[i][j]) zero = true;
        else if (have_orders) zero = l > 2 || !order_present[i][j][l];
        if (zero) out.push_back(layout.index_a(i, j, l));
      }
  return out;
}

ConstraintSet finalize_constraints(std::vector<Eigen::VectorXd> rows, std::vector<double> values) {
  if (rows.empty()) throw InvalidConstraints("no constraints given");
  const Eigen::Index P = rows.front().size();
  ConstraintSet cs;
  cs.Gamma.resize(static_cast<Eigen::Index>(rows.size()), P);
  cs.upsilon.resize(static_cast<Eigen::Index>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    cs.Gamma.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    cs.upsilon(static_cast<Eigen::Index>(r)) = values[r];
  }
  if (cs.upsilon.cwiseAbs().maxCoeff() == 0.0)
    throw InvalidConstraints("all constrained values are zero; the parameterization has no scale");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(cs.Gamma.transpose());
  if (qr.rank() != cs.Gamma.rows()) throw InvalidConstraints("constraint matrix is rank deficient");
  return cs;
}

ConstraintSet build_constraints(const ParamLayout& layout, const PolynomialMatrix& B_known,
                                const std::vector<int>& zero_a, const std::vector<std::pair<int, double>>& known) {
  if (B_known.rows() != layout.L || B_known.cols() != layout.K)
    throw DimensionMismatch("known B does not match the layout");
  std::map<int, double> pins;
  auto pin = [&](int idx, double v) {
    auto it = pins.find(idx);
    if (it != pins.end()) {
      if (it->second != v) throw InvalidConstraints("conflicting constraints on one coordinate");
      return;
    }
    pins.emplace(idx, v);
  };
  for (int i = 0; i < layout.L; ++i)
    for (int x = 0; x < layout.K; ++x)
      for (int l = 0; l <= layout.n_b; ++l) pin(layout.index_b(i, x, l), B_known(i, x).coeff(l));
  for (int idx : zero_a) pin(idx, 0.0);
  for (const auto& [idx, v] : known) pin(idx, v);

  // Unit rows on distinct coordinates are full rank by construction.
  ConstraintSet cs;
  cs.Gamma = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pins.size()), layout.size());
  cs.upsilon.resize(static_cast<Eigen::Index>(pins.size()));
  int r = 0;
  for (const auto& [idx, v] : pins) {
    cs.Gamma(r, idx) = 1.0;
    cs.upsilon(r) = v;
    ++r;
  }
  if (cs.rows() == 0 || cs.upsilon.cwiseAbs().maxCoeff() == 0.0)
    throw InvalidConstraints("all constrained values are zero; the parameterization has no scale");
  return cs;
}

Eigen::MatrixXcd weight_factor(const Eigen::MatrixXcd& Cw, double floor) {
  const Eigen::MatrixXcd C = repair_psd(Cw, 1e-12, floor);
  Eigen::LLT<Eigen::MatrixXcd> llt(C);
  if (llt.info() != Eigen::Success) throw SingularWeight("noise covariance is not positive definite");
  return llt.matrixL();
}

Eigen::MatrixXcd build_weight(const Eigen::MatrixXcd& Cw, const Eigen::MatrixXcd& A_prev, double floor) {
  if (Cw.rows() != A_prev.rows()) throw DimensionMismatch("weight dimensions differ");
  return weight_from_factor(weight_factor(Cw, floor), A_prev);
}

Eigen::MatrixXcd build_regressor(const Eigen::VectorXcd& W_hat, const Eigen::VectorXcd& Rk,
                                 const Eigen::MatrixXcd& weight, cplx Omega, const ParamLayout& layout) {
  if (W_hat.size() != layout.L || Rk.size() != layout.K || weight.rows() != layout.L)
    throw DimensionMismatch("regressor inputs do not match the layout");
  Eigen::MatrixXcd Q;
  fill_regressor(W_hat, Rk, weight, Omega, layout, Q);
  return Q;
}

Eigen::MatrixXcd build_regressor(const SpectralDataset& ds, const NonparamEstimate& np, const ParamLayout& layout,
                                 const std::vector<Eigen::MatrixXcd>& weights) {
  const int F = ds.F();
  if (np.F() != F || static_cast<int>(weights.size()) != F) throw DimensionMismatch("per-bin inputs differ in length");
  Eigen::MatrixXcd Q(static_cast<Eigen::Index>(F) * layout.L, layout.size());
  Eigen::MatrixXcd Qk;
  for (int k = 0; k < F; ++k) {
    fill_regressor(np.W.col(k), ds.R.col(k), weights[k], ds.Omega(k), layout, Qk);
    Q.middleRows(static_cast<Eigen::Index>(k) * layout.L, layout.L) = Qk;
  }
  return Q;
}

namespace {

// Exact assignment for single-entry rows, shared by both solvers.
void honour_unit_rows(const ConstraintSet& cs, Eigen::VectorXd& theta) {
  for (Eigen::Index r = 0; r < cs.Gamma.rows(); ++r) {
    Eigen::Index at = -1;
    int nz = 0;
    for (Eigen::Index c = 0; c < cs.Gamma.cols(); ++c)
      if (cs.Gamma(r, c) != 0.0) {
        ++nz;
        at = c;
      }
    if (nz == 1) theta(at) = cs.upsilon(r) / cs.Gamma(r, at);
  }
}

}  // namespace

KktSolution kkt_solve(const Eigen::MatrixXd& H, const ConstraintSet& cs) {
  const Eigen::Index P = H.rows();
  const Eigen::Index m = cs.Gamma.rows();
  if (H.cols() != P || cs.Gamma.cols() != P) throw DimensionMismatch("KKT blocks do not conform");
  // Jacobi scaling of the columns, then unit-norm constraint rows: the raw
  // columns carry powers of Omega and span many decades.
  Eigen::VectorXd d(P);
  for (Eigen::Index i = 0; i < P; ++i) d(i) = H(i, i) > 0.0 ? 1.0 / std::sqrt(H(i, i)) : 1.0;
  Eigen::MatrixXd Gs = cs.Gamma * d.asDiagonal();
  Eigen::VectorXd s(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const double n = Gs.row(r).norm();
    if (n == 0.0) throw InvalidConstraints("empty constraint row");
    s(r) = 1.0 / n;
  }
  Gs = s.asDiagonal() * Gs;
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(P + m, P + m);
  K.topLeftCorner(P, P) = 2.0 * d.asDiagonal() * H * d.asDiagonal();
  K.topRightCorner(P, m) = Gs.transpose();
  K.bottomLeftCorner(m, P) = Gs;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(P + m);
  rhs.tail(m) = s.cwiseProduct(cs.upsilon);

  Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  lu.setThreshold(1e-13);
  if (!lu.isInvertible()) throw SingularKKT("KKT matrix is singular: parameterization is not identifiable");
  Eigen::VectorXd z = lu.solve(rhs);
  for (int it = 0; it < 2; ++it) z += lu.solve(rhs - K * z);

  KktSolution sol;
  sol.theta = d.cwiseProduct(z.head(P));
  sol.lambda = s.cwiseProduct(z.tail(m));
  // Single-entry rows are honoured exactly rather than to solver precision.
  honour_unit_rows(cs, sol.theta);
  return sol;
}

KktSolution kkt_solve(const Eigen::MatrixXcd& Q, const ConstraintSet& cs) {
  const Eigen::MatrixXd H = (Q.adjoint() * Q).real();
  return kkt_solve(H, cs);
}

Eigen::VectorXd constrained_lsq(const Eigen::MatrixXd& X, const ConstraintSet& cs) {
  const Eigen::Index P = X.cols();
  const Eigen::Index m = cs.Gamma.rows();
  if (cs.Gamma.cols() != P) throw DimensionMismatch("constraints do not match the regressor");
  Eigen::VectorXd d(P);
  for (Eigen::Index c = 0; c < P; ++c) {
    const double n = X.col(c).norm();
    d(c) = n > 0.0 ? 1.0 / n : 1.0;
  }
  Eigen::MatrixXd Gs = cs.Gamma * d.asDiagonal();
  Eigen::VectorXd us = cs.upsilon;
  for (Eigen::Index r = 0; r < m; ++r) {
    const double n = Gs.row(r).norm();
    if (n == 0.0) throw InvalidConstraints("empty constraint row");
    Gs.row(r) /= n;
    us(r) /= n;
  }
  // z = z_p + N y with Gs z_p = us and the columns of N spanning ker(Gs).
  Eigen::HouseholderQR<Eigen::MatrixXd> qg(Gs.transpose());
  const Eigen::MatrixXd Qg(qg.householderQ());
  const Eigen::MatrixXd RgT = qg.matrixQR().topLeftCorner(m, m).transpose();
  const Eigen::VectorXd w = RgT.triangularView<Eigen::Lower>().solve(us);
  const Eigen::VectorXd zp = Qg.leftCols(m) * w;
  const Eigen::MatrixXd N = Qg.rightCols(P - m);
  const Eigen::MatrixXd Xs = X * d.asDiagonal();
  Eigen::VectorXd z = zp;
  if (P > m) {
    const Eigen::MatrixXd XN = Xs * N;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(XN);
    z += N * qr.solve(-(Xs * zp));
  }
  Eigen::VectorXd theta = d.cwiseProduct(z);
  honour_unit_rows(cs, theta);
  return theta;
}

double weight_floor(const NonparamEstimate& np, double epsilon_w) {
  double acc = 0.0;
  for (const auto& C : np.Cw) acc += C.trace().real() / static_cast<double>(C.rows());
  const double mean = np.F() > 0 ? acc / np.F() : 0.0;
  return mean > 0.0 ? epsilon_w * mean : 1.0;
}

SkResult sk_identify(const SpectralDataset& ds, const NonparamEstimate& np, const ParamLayout& layout,
                     const ConstraintSet& cs, const SkSettings& settings) {
  if (settings.max_iter < 1) throw InvalidConfig("max_iter must be >= 1");
  const int L = layout.L;
  const int F = ds.F();
  const int P = layout.size();
  if (ds.L() != L || ds.K() != layout.K || np.F() != F) throw DimensionMismatch("dataset does not match layout");
  if (cs.Gamma.cols() != P) throw DimensionMismatch("constraints do not match layout");

  const Reduction red = reduce(cs, P);
  const int Pa = static_cast<int>(red.active.size());
  const double floor = weight_floor(np, settings.epsilon_w);
  std::vector<Eigen::MatrixXcd> Lc(F);
  for (int k = 0; k < F; ++k) Lc[k] = weight_factor(np.Cw[k], floor);

  constexpr int kChunkBins = 128;
  Eigen::MatrixXd Xt(Pa, 2 * L * kChunkBins);
  Eigen::MatrixXcd Qk, Wt;
  Eigen::VectorXd theta_full = Eigen::VectorXd::Zero(P);
  Eigen::VectorXd theta_prev;
  DCNModel current;
  bool have_model = false;

  SkResult res;
  double best_residual = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_theta;
  Eigen::MatrixXd X;
  if (settings.use_qr) X.resize(2 * static_cast<Eigen::Index>(L) * F, Pa);
  Eigen::VectorXd colnorm(Pa);
  for (int it = 1; it <= settings.max_iter; ++it) {
    Eigen::MatrixXd H;
    if (!settings.use_qr) H = Eigen::MatrixXd::Zero(Pa, Pa);
    int filled = 0;
    auto flush = [&]() {
      if (filled == 0) return;
      H.selfadjointView<Eigen::Lower>().rankUpdate(Xt.leftCols(filled));
      filled = 0;
    };
    for (int k = 0; k < F; ++k) {
      const cplx om = ds.Omega(k);
      const Eigen::MatrixXcd A_prev = have_model ? eval_at(current.A, om) : Eigen::MatrixXcd::Identity(L, L);
      Wt = weight_from_factor(Lc[k], A_prev);
      fill_regressor(np.W.col(k), ds.R.col(k), Wt, om, layout, Qk);
      if (settings.use_qr) {
        for (int r = 0; r < L; ++r)
          for (int c = 0; c < Pa; ++c) {
            const cplx q = Qk(r, red.active[c]);
            X(2 * (k * L + r), c) = q.real();
            X(2 * (k * L + r) + 1, c) = q.imag();
          }
        continue;
      }
      for (int r = 0; r < L; ++r) {
        for (int c = 0; c < Pa; ++c) {
          const cplx q = Qk(r, red.active[c]);
          Xt(c, filled) = q.real();
          Xt(c, filled + 1) = q.imag();
        }
        filled += 2;
      }
      if (filled == Xt.cols()) flush();
    }
    flush();

    Eigen::VectorXd th;
    double residual;
    if (settings.use_qr) {
      th = constrained_lsq(X, red.cs);
      residual = (X * th).norm();
      colnorm = X.colwise().norm().transpose();
    } else {
      H = H.selfadjointView<Eigen::Lower>();
      th = kkt_solve(H, red.cs).theta;
      residual = std::sqrt(std::max(0.0, th.dot(H * th)));
      colnorm = H.diagonal().cwiseMax(0.0).cwiseSqrt();
    }

    double change = std::numeric_limits<double>::infinity();
    if (theta_prev.size() == Pa) {
      double num = 0.0, den = 0.0;
      for (int c = 0; c < Pa; ++c) {
        const double sc = colnorm(c);
        num = std::max(num, sc * std::abs(th(c) - theta_prev(c)));
        den = std::max(den, sc * std::abs(th(c)));
      }
      change = den > 0.0 ? num / den : 0.0;
    }
    res.history.push_back({it, residual, change});

    theta_full.setZero();
    for (int c = 0; c < Pa; ++c) theta_full(red.active[c]) = th(c);
    if (residual < best_residual) {
      best_residual = residual;
      best_theta = theta_full;
    }
    if (change < settings.rel_tol) {
      res.theta = theta_full;
      res.converged = true;
      return res;
    }
    theta_prev = th;
    current = layout.unpack(theta_full);
    have_model = true;
  }
  res.theta = best_theta;
  res.converged = false;
  return res;
}

}  // namespace dcnid
