#include "dcnid/subnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "dcnid/errors.hpp"

namespace dcnid {

namespace {

int position(const std::vector<int>& v, int x) {
  auto it = std::find(v.begin(), v.end(), x);
  return it == v.end() ? -1 : static_cast<int>(it - v.begin());
}

int lowest_order(const Polynomial& p) {
  for (int l = 0; l <= p.degree(); ++l)
    if (p.coeff(l) != 0.0) return l;
  return -1;
}

double median_abs(std::vector<double> v) {
  for (double& x : v) x = std::abs(x);
  v.erase(std::remove(v.begin(), v.end(), 0.0), v.end());
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<int> Partition::M() const {
  std::vector<int> m = J;
  m.insert(m.end(), D.begin(), D.end());
  return m;
}

void Partition::check_cover(int L) const {
  if (J.empty()) throw InvalidPartition("target set J is empty");
  std::vector<int> seen(L, 0);
  for (const auto* set : {&J, &D, &I})
    for (int x : *set) {
      if (x < 0 || x >= L) throw InvalidPartition("partition node out of range");
      if (seen[x]++) throw InvalidPartition("partition sets overlap");
    }
  for (int x = 0; x < L; ++x)
    if (!seen[x]) throw InvalidPartition("node " + std::to_string(x + 1) + " is in no partition set");
}

void Partition::check(const Topology& topology) const {
  check_cover(static_cast<int>(topology.size()));
  for (int j : J)
    for (int i : I)
      if (topology[j][i])
        throw InvalidPartition("node " + std::to_string(j + 1) + " in J is adjacent to immersed node " +
                               std::to_string(i + 1) + "; move it to D");
}

ImmersedModel kron_reduce(const DCNModel& model, const Partition& part, double gcd_tol) {
  part.check_cover(model.L());
  const std::vector<int> M = part.M();
  std::vector<int> kcols(model.K());
  for (int x = 0; x < model.K(); ++x) kcols[x] = x;
  const bool has_c = !model.C.empty();

  ImmersedModel out;
  if (part.I.empty()) {
    out.A_im = model.A.block(M, M);
    out.B_im = model.B.block(M, kcols);
    out.C_im = has_c ? model.C.block(M, {0}) : PolynomialMatrix(static_cast<int>(M.size()), 1);
    out.d_II = Polynomial::constant(1.0);
    return out;
  }
  const PolynomialMatrix A_II = model.A.block(part.I, part.I);
  Polynomial d = det(A_II);
  if (d.is_zero()) throw SingularImmersionBlock("det(A_II) is identically zero");
  const PolynomialMatrix T = model.A.block(M, part.I) * adjugate(A_II);

  out.A_im = d * model.A.block(M, M) - T * model.A.block(part.I, M);
  out.B_im = d * model.B.block(M, kcols) - T * model.B.block(part.I, kcols);
  out.C_im = has_c ? d * model.C.block(M, {0}) - T * model.C.block(part.I, {0})
                   : PolynomialMatrix(static_cast<int>(M.size()), 1);
  // Symmetric in exact arithmetic; make it symmetric in floating point too.
  for (int i = 0; i < out.A_im.rows(); ++i)
    for (int j = i + 1; j < out.A_im.cols(); ++j) out.A_im(j, i) = out.A_im(i, j);

  Polynomial g = d;
  auto fold = [&](const PolynomialMatrix& P) {
    for (int i = 0; i < P.rows(); ++i)
      for (int j = 0; j < P.cols(); ++j)
        if (!P(i, j).is_zero() && g.degree() > 0) g = poly_gcd(g, P(i, j), gcd_tol);
  };
  fold(out.A_im);
  fold(out.B_im);
  if (g.degree() > 0) {
    auto divide_all = [&](PolynomialMatrix& P) {
      for (int i = 0; i < P.rows(); ++i)
        for (int j = 0; j < P.cols(); ++j)
          if (!P(i, j).is_zero()) P(i, j) = divide_exact(P(i, j), g, 1e-6);
    };
    divide_all(out.A_im);
    divide_all(out.B_im);
    divide_all(out.C_im);
    d = divide_exact(d, g, 1e-6);
  }
  out.d_II = d;
  return out;
}

std::pair<int, int> immersed_orders(const DCNModel& design, const Partition& part) {
  const ImmersedModel im = kron_reduce(design, part);
  return {std::max(0, im.A_im.max_order()), std::max(0, im.B_im.max_order())};
}

ConstraintSet immersed_constraints(const ParamLayout& lay, const Partition& part, const DCNModel& original_design,
                                   double pin_value, bool pin_support) {
  const std::vector<int> M = part.M();
  const int LM = static_cast<int>(M.size());
  const int LJ = static_cast<int>(part.J.size());
  if (lay.L != LM || lay.K != original_design.K()) throw DimensionMismatch("immersed layout does not match partition");
  std::vector<int> zeros;
  for (int a = 0; a < LJ; ++a)
    for (int b = 0; b < LM; ++b)
      if (a != b && !original_design.topology[M[a]][M[b]]) {
        if (b < LJ && b < a) continue;  // pair already listed
        for (int l = 0; l <= lay.n_a; ++l) zeros.push_back(lay.index_a(a, b, l));
      }

  std::vector<std::pair<int, double>> b_pins;
  double ref = 0.0;
  for (int x = 0; x < lay.K; ++x) {
    bool enters_I = false;
    for (int i : part.I)
      if (!original_design.B(i, x).is_zero()) enters_I = true;
    if (enters_I) continue;  // B_im column mixes unknown immersed dynamics
    for (int m = 0; m < LM; ++m) {
      const Polynomial& b = original_design.B(M[m], x);
      const int lo = lowest_order(b);
      for (int l = 0; l <= lay.n_b; ++l) {
        const int idx = lay.index_b(m, x, l);
        if (lo < 0 || l < lo) {
          b_pins.push_back({idx, 0.0});
        } else if (l == lo) {
          if (ref == 0.0) ref = b.coeff(lo);
          b_pins.push_back({idx, pin_value * b.coeff(lo) / ref});
        }
      }
    }
  }
  if (ref == 0.0) throw InvalidConstraints("no excitation enters the measured nodes directly; supply a pin");

  // build_constraints pins all of B; here only part of B is known, so assemble directly.
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> vals;
  std::set<int> used;
  auto unit = [&](int idx, double v) {
    if (!used.insert(idx).second) return;
    Eigen::VectorXd r = Eigen::VectorXd::Zero(lay.size());
    r(idx) = 1.0;
    rows.push_back(r);
    vals.push_back(v);
  };
  for (const auto& [idx, v] : b_pins) unit(idx, v);
  for (int idx : zeros) unit(idx, 0.0);
  if (pin_support) {
    const ImmersedModel im = kron_reduce(original_design, part);
    for (int a = 0; a < LM; ++a) {
      for (int b = a; b < LM; ++b)
        for (int l = 0; l <= lay.n_a; ++l)
          if (im.A_im(a, b).coeff(l) == 0.0) unit(lay.index_a(a, b, l), 0.0);
      for (int x = 0; x < lay.K; ++x)
        for (int l = 0; l <= lay.n_b; ++l)
          if (im.B_im(a, x).coeff(l) == 0.0) unit(lay.index_b(a, x, l), 0.0);
    }
  }
  return finalize_constraints(std::move(rows), std::move(vals));
}

ImmersedFit identify_immersed(const SpectralDataset& ds_measured, const ParamLayout& lay, const ConstraintSet& cs,
                              const LpmSettings& lpm, const SkSettings& sk, const GnSettings& gn, bool refine) {
  ImmersedFit fit;
  fit.layout = lay;
  fit.np = run_lpm(ds_measured, lpm);
  fit.sk = sk_identify(ds_measured, fit.np, lay, cs, sk);
  fit.eta = fit.sk.theta;
  if (refine) {
    fit.smle = smle_refine(fit.sk.theta, cs.free_mask(), ds_measured, fit.np, lay, gn);
    fit.eta = fit.smle.theta;
  }
  return fit;
}

Eigen::MatrixXcd build_Q1(const Eigen::MatrixXcd& Ajj_hat, const Eigen::MatrixXcd& Ajd_hat,
                          const Eigen::MatrixXcd& Bj_hat, cplx Omega, const SubnetLayout& lay) {
  const int LJ = lay.LJ, LD = lay.LD, K = lay.K;
  if (Ajj_hat.rows() != LJ || Ajj_hat.cols() != LJ || Ajd_hat.rows() != LJ || Ajd_hat.cols() != LD ||
      Bj_hat.rows() != LJ || Bj_hat.cols() != K)
    throw DimensionMismatch("immersed blocks do not match the subnet layout");
  const int maxo = std::max(lay.n_a, lay.n_b);
  std::vector<cplx> pw(maxo + 1);
  pw[0] = 1.0;
  for (int l = 1; l <= maxo; ++l) pw[l] = pw[l - 1] * Omega;

  Eigen::MatrixXcd Q = Eigen::MatrixXcd::Zero(LJ * LD + LJ * K, lay.size());
  // M3(i, j) = sum_m A_JJ(i, m) Â_JD(m, j) - sum_m Â_JJ(i, m) A_JD(m, j)
  for (int i = 0; i < LJ; ++i)
    for (int j = 0; j < LD; ++j) {
      const int row = i * LD + j;
      for (int m = 0; m < LJ; ++m)
        for (int l = 0; l <= lay.n_a; ++l) {
          Q(row, lay.idx_jj(i, m, l)) += pw[l] * Ajd_hat(m, j);
          Q(row, lay.idx_jd(m, j, l)) -= pw[l] * Ajj_hat(i, m);
        }
    }
  // M4(i, x) = sum_m A_JJ(i, m) B̂_J(m, x) - sum_m Â_JJ(i, m) B_J(m, x)
  for (int i = 0; i < LJ; ++i)
    for (int x = 0; x < K; ++x) {
      const int row = LJ * LD + i * K + x;
      for (int m = 0; m < LJ; ++m) {
        for (int l = 0; l <= lay.n_a; ++l) Q(row, lay.idx_jj(i, m, l)) += pw[l] * Bj_hat(m, x);
        for (int l = 0; l <= lay.n_b; ++l) Q(row, lay.idx_b(m, x, l)) -= pw[l] * Ajj_hat(i, m);
      }
    }
  return Q;
}

Eigen::MatrixXcd build_Q1(const DCNModel& immersed, const Eigen::VectorXd& omega, const SubnetLayout& lay) {
  const int rows_k = lay.LJ * lay.LD + lay.LJ * lay.K;
  Eigen::MatrixXcd Q(rows_k * omega.size(), lay.size());
  for (Eigen::Index k = 0; k < omega.size(); ++k) {
    const cplx om(0.0, omega(k));
    const Eigen::MatrixXcd A = eval_at(immersed.A, om);
    const Eigen::MatrixXcd B = eval_at(immersed.B, om);
    Q.middleRows(k * rows_k, rows_k) =
        build_Q1(A.topLeftCorner(lay.LJ, lay.LJ), A.block(0, lay.LJ, lay.LJ, lay.LD), B.topRows(lay.LJ), om, lay);
  }
  return Q;
}

ConstraintSet subnet_constraints(const SubnetLayout& lay, const Partition& part, const RLCNetwork& design,
                                 const PolynomialMatrix& B_original) {
  const auto orders = design_orders(design);
  const Topology topo = design.topology();
  const int P = lay.size();
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> vals;
  auto unit = [&](int idx, double v) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(P);
    r(idx) = 1.0;
    rows.push_back(r);
    vals.push_back(v);
  };
  auto order_ok = [&](int a, int b, int l) { return l <= 2 && orders[a][b][l]; };

  for (int i = 0; i < lay.LJ; ++i) {
    const int gi = part.J[i];
    for (int l = 0; l <= lay.n_a; ++l)
      if (!order_ok(gi, gi, l)) unit(lay.idx_jj(i, i, l), 0.0);
    for (int m = i + 1; m < lay.LJ; ++m) {
      const int gm = part.J[m];
      for (int l = 0; l <= lay.n_a; ++l) {
        if (!topo[gi][gm] || !order_ok(gi, gm, l)) {
          unit(lay.idx_jj(i, m, l), 0.0);
          unit(lay.idx_jj(m, i, l), 0.0);
        } else {
          Eigen::VectorXd r = Eigen::VectorXd::Zero(P);
          r(lay.idx_jj(i, m, l)) = 1.0;
          r(lay.idx_jj(m, i, l)) = -1.0;
          rows.push_back(r);
          vals.push_back(0.0);
        }
      }
    }
    for (int j = 0; j < lay.LD; ++j) {
      const int gj = part.D[j];
      for (int l = 0; l <= lay.n_a; ++l)
        if (!topo[gi][gj] || !order_ok(gi, gj, l)) unit(lay.idx_jd(i, j, l), 0.0);
    }
    for (int x = 0; x < lay.K; ++x)
      for (int l = 0; l <= lay.n_b; ++l) unit(lay.idx_b(i, x, l), B_original(gi, x).coeff(l));
  }
  return finalize_constraints(std::move(rows), std::move(vals));
}

SubnetEstimate unpack_subnet(const Eigen::VectorXd& theta1, const SubnetLayout& lay) {
  if (theta1.size() != lay.size()) throw DimensionMismatch("theta_1 length does not match the subnet layout");
  SubnetEstimate e;
  e.theta1 = theta1;
  e.A_JJ = PolynomialMatrix(lay.LJ, lay.LJ);
  e.A_JD = PolynomialMatrix(lay.LJ, lay.LD);
  e.B_J = PolynomialMatrix(lay.LJ, lay.K);
  std::vector<double> c;
  for (int i = 0; i < lay.LJ; ++i) {
    for (int m = 0; m < lay.LJ; ++m) {
      c.assign(lay.n_a + 1, 0.0);
      for (int l = 0; l <= lay.n_a; ++l) c[l] = theta1(lay.idx_jj(i, m, l));
      e.A_JJ(i, m) = Polynomial(c);
    }
    for (int j = 0; j < lay.LD; ++j) {
      c.assign(lay.n_a + 1, 0.0);
      for (int l = 0; l <= lay.n_a; ++l) c[l] = theta1(lay.idx_jd(i, j, l));
      e.A_JD(i, j) = Polynomial(c);
    }
    for (int x = 0; x < lay.K; ++x) {
      c.assign(lay.n_b + 1, 0.0);
      for (int l = 0; l <= lay.n_b; ++l) c[l] = theta1(lay.idx_b(i, x, l));
      e.B_J(i, x) = Polynomial(c);
    }
  }
  return e;
}

SubnetEstimate recover_subnet(const DCNModel& immersed, const Eigen::VectorXd& omega, const SubnetLayout& lay,
                              const ConstraintSet& cs) {
  if (cs.Gamma.cols() != lay.size()) throw DimensionMismatch("subnet constraints do not match layout");
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(lay.size(), lay.size());
  constexpr Eigen::Index kChunk = 256;
  for (Eigen::Index k0 = 0; k0 < omega.size(); k0 += kChunk) {
    const Eigen::Index n = std::min(kChunk, omega.size() - k0);
    const Eigen::MatrixXcd Q = build_Q1(immersed, omega.segment(k0, n), lay);
    H += (Q.adjoint() * Q).real();
  }
  return unpack_subnet(kkt_solve(H, cs).theta, lay);
}

std::vector<ComponentSlot> subnet_component_layout(const RLCNetwork& design, const Partition& part) {
  std::vector<ComponentSlot> out;
  auto inJ = [&](int x) { return position(part.J, x) >= 0; };
  auto inD = [&](int x) { return position(part.D, x) >= 0; };
  for (const auto& s : component_layout(design)) {
    if (s.grounded()) {
      if (inJ(s.j)) out.push_back(s);
    } else if ((inJ(s.j) && (inJ(s.k) || inD(s.k))) || (inJ(s.k) && inD(s.j))) {
      out.push_back(s);
    }
  }
  return out;
}

double slot_coefficient(const SubnetEstimate& est, const Partition& part, const ComponentSlot& slot) {
  int j = slot.j, k = slot.k;
  if (position(part.J, j) < 0) std::swap(j, k);
  const int a = position(part.J, j);
  if (a < 0) throw InvalidPartition("component " + slot.name + " is outside the target subnetwork");
  if (slot.grounded()) {
    double s = 0.0;
    for (int m = 0; m < est.A_JJ.cols(); ++m) s += est.A_JJ(a, m).coeff(slot.order);
    for (int m = 0; m < est.A_JD.cols(); ++m) s += est.A_JD(a, m).coeff(slot.order);
    return s;
  }
  const int b = position(part.J, k);
  if (b >= 0) return -est.A_JJ(std::min(a, b), std::max(a, b)).coeff(slot.order);
  const int d = position(part.D, k);
  if (d < 0) throw InvalidPartition("component " + slot.name + " is outside the target subnetwork");
  return -est.A_JD(a, d).coeff(slot.order);
}

std::vector<ComponentEstimate> subnet_components(const SubnetEstimate& est, const Partition& part,
                                                 const std::vector<ComponentSlot>& layout,
                                                 const ComponentOptions& opt) {
  std::vector<double> coef(layout.size());
  std::vector<double> groups[2][3];
  for (size_t s = 0; s < layout.size(); ++s) {
    coef[s] = slot_coefficient(est, part, layout[s]);
    groups[layout[s].grounded() ? 1 : 0][layout[s].order].push_back(coef[s]);
  }
  OpenThresholds th;
  for (int o = 0; o < 3; ++o) {
    th.coupling[o] = opt.open_relative * median_abs(groups[0][o]);
    th.grounded[o] = opt.open_relative * median_abs(groups[1][o]);
  }
  std::vector<ComponentEstimate> out;
  for (size_t s = 0; s < layout.size(); ++s) {
    double scale = std::abs(coef[s]);
    if (layout[s].grounded()) {
      const int a = position(part.J, layout[s].j);
      scale = std::abs(est.A_JJ(a, a).coeff(layout[s].order));
    }
    out.push_back(make_component(layout[s], static_cast<int>(s) + 1, coef[s], th.for_slot(layout[s]), scale, opt));
  }
  return out;
}

// ---- factored refinement --------------------------------------------------------

namespace {

// phi = [d_1 .. d_deg | subnetwork coefficients a_{im,l} | free immersed coordinates],
// with d_0 fixed by the excitation pin.
class FactoredImmersed {
 public:
  FactoredImmersed(const ParamLayout& lay, const ConstraintSet& cs, const Partition& part, const RLCNetwork& design,
                   const DCNModel& md, int deg_d)
      : lay_(lay), LJ_(static_cast<int>(part.J.size())), deg_(deg_d) {
    const std::vector<int> M = part.M();
    const int LM = static_cast<int>(M.size());
    const auto orders = design_orders(design);
    const Topology topo = design.topology();
    if (lay.n_a < deg_d + 2) throw InvalidConstraints("immersed order n_a too low for the factored model");

    const std::vector<bool> free = cs.free_mask();
    for (int r = 0; r < cs.rows(); ++r) {
      int nz = 0, at = -1;
      for (Eigen::Index c = 0; c < cs.Gamma.cols(); ++c)
        if (cs.Gamma(r, c) != 0.0) ++nz, at = static_cast<int>(c);
      if (nz == 1) pins_.push_back({at, cs.upsilon(r) / cs.Gamma(r, at)});
    }
    auto pinned_value = [&](int idx, double& v) {
      for (const auto& [i, val] : pins_)
        if (i == idx) return v = val, true;
      return false;
    };

    for (int i = 0; i < LJ_; ++i)
      for (int m = i; m < LM; ++m) {
        const int gi = M[i], gm = M[m];
        if (m != i && !topo[gi][gm]) continue;
        for (int l = 0; l <= 2; ++l)
          if (orders[gi][gm][l]) a_.push_back({i, m, l});
      }

    for (int x = 0; x < lay.K; ++x) {
      bool enters_I = false;
      for (int i : part.I)
        if (!md.B(i, x).is_zero()) enters_I = true;
      for (int m = 0; m < LM; ++m) {
        if (m >= LJ_ && enters_I) continue;  // free coordinates
        const Polynomial& b = md.B(M[m], x);
        if (b.degree() + deg_d > lay.n_b) throw InvalidConstraints("immersed order n_b too low for the factored model");
        bfac_.push_back({m, x, b});
      }
    }

    d0_ = 0.0;
    for (const auto& e : bfac_) {
      const int lo = lowest_order(e.b);
      double v = 0.0;
      if (lo >= 0 && pinned_value(lay.index_b(e.m, e.x, lo), v) && v != 0.0) {
        d0_ = v / e.b.coeff(lo);
        break;
      }
    }
    if (d0_ == 0.0) throw InvalidConstraints("factored refinement needs a pinned excitation coefficient");

    for (int idx = 0; idx < lay.size(); ++idx) {
      if (!free[idx]) continue;
      const auto c = lay.coord(idx);
      const bool direct = (c.block == ParamLayout::Block::A && c.i >= LJ_ && c.j >= LJ_) ||
                          (c.block == ParamLayout::Block::B && c.i >= LJ_ && !determined_b(c.i, c.j)) ||
                          c.block == ParamLayout::Block::C;
      if (direct) direct_.push_back(idx);
    }

  }

  int size() const { return deg_ + static_cast<int>(a_.size() + direct_.size()); }

  Polynomial d(const Eigen::VectorXd& phi) const {
    std::vector<double> c(deg_ + 1);
    c[0] = d0_;
    for (int l = 1; l <= deg_; ++l) c[l] = phi(l - 1);
    return Polynomial(c);
  }

  Eigen::VectorXd eta(const Eigen::VectorXd& phi) const {
    Eigen::VectorXd th = Eigen::VectorXd::Zero(lay_.size());
    const Polynomial dp = d(phi);
    for (size_t e = 0; e < a_.size(); ++e) {
      const auto& a = a_[e];
      for (int l = 0; l <= deg_; ++l) th(lay_.index_a(a.i, a.m, a.l + l)) += dp.coeff(l) * phi(deg_ + e);
    }
    for (const auto& e : bfac_)
      for (int lb = 0; lb <= e.b.degree(); ++lb)
        for (int l = 0; l <= deg_; ++l) th(lay_.index_b(e.m, e.x, lb + l)) += dp.coeff(l) * e.b.coeff(lb);
    const int off = deg_ + static_cast<int>(a_.size());
    for (size_t c = 0; c < direct_.size(); ++c) th(direct_[c]) = phi(off + c);
    for (const auto& [idx, v] : pins_) th(idx) = v;
    return th;
  }

  /// d r / d phi at one bin (r = Lc^-1 (W - x)), given P = Lc^-1 A^-1,
  /// x = A^-1 u and the powers of Omega.
  void bin_jacobian(const Eigen::VectorXd& phi, const std::vector<cplx>& pw, const Eigen::MatrixXcd& P,
                    const Eigen::VectorXcd& x, const Eigen::VectorXcd& Rk, Eigen::Ref<Eigen::MatrixXcd> G) const {
    cplx dval = 0.0;
    const Polynomial dp = d(phi);
    for (int l = 0; l <= deg_; ++l) dval += dp.coeff(l) * pw[l];
    // (S x - B_det R), S the J rows of A_J(Omega) embedded symmetrically.
    Eigen::VectorXcd v = Eigen::VectorXcd::Zero(x.size());
    for (size_t e = 0; e < a_.size(); ++e) {
      const auto& a = a_[e];
      const cplx val = phi(deg_ + e) * pw[a.l];
      v(a.i) += val * x(a.m);
      if (a.m != a.i) v(a.m) += val * x(a.i);
      G.col(deg_ + e) = a.m != a.i ? Eigen::VectorXcd(dval * pw[a.l] * (P.col(a.i) * x(a.m) + P.col(a.m) * x(a.i)))
                                   : Eigen::VectorXcd(dval * pw[a.l] * x(a.i) * P.col(a.i));
    }
    for (const auto& e : bfac_) {
      cplx bv = 0.0;
      for (int lb = 0; lb <= e.b.degree(); ++lb) bv += e.b.coeff(lb) * pw[lb];
      v(e.m) -= bv * Rk(e.x);
    }
    const Eigen::VectorXcd g = P * v;
    for (int l = 1; l <= deg_; ++l) G.col(l - 1) = pw[l] * g;
    const int off = deg_ + static_cast<int>(a_.size());
    for (size_t c = 0; c < direct_.size(); ++c) {
      const auto co = lay_.coord(direct_[c]);
      auto col = G.col(off + static_cast<int>(c));
      switch (co.block) {
        case ParamLayout::Block::A:
          if (co.i == co.j) col = pw[co.l] * x(co.i) * P.col(co.i);
          else col = pw[co.l] * (P.col(co.i) * x(co.j) + P.col(co.j) * x(co.i));
          break;
        case ParamLayout::Block::B:
          col = -pw[co.l] * Rk(co.j) * P.col(co.i);
          break;
        case ParamLayout::Block::C:
          col = -pw[co.l] * P.col(co.i);
          break;
      }
    }
  }

  /// phi from a full immersed vector, a subnetwork estimate in original
  /// scale, and the common factor d (rescaled here so that d_0 matches).
  Eigen::VectorXd phi(const Eigen::VectorXd& eta, const PolynomialMatrix& A_J, Polynomial dp) const {
    Eigen::VectorXd out(size());
    dp *= d0_ / dp.coeff(0);
    for (int l = 1; l <= deg_; ++l) out(l - 1) = dp.coeff(l);
    for (size_t e = 0; e < a_.size(); ++e) out(deg_ + e) = A_J(a_[e].i, a_[e].m).coeff(a_[e].l);
    const int off = deg_ + static_cast<int>(a_.size());
    for (size_t c = 0; c < direct_.size(); ++c) out(off + c) = eta(direct_[c]);
    return out;
  }

  /// The common factor implied by the first determined excitation row of eta.
  Polynomial factor_from(const Eigen::VectorXd& eta) const {
    for (const auto& e : bfac_) {
      if (e.b.is_zero()) continue;
      std::vector<double> c(lay_.n_b + 1);
      for (int l = 0; l <= lay_.n_b; ++l) c[l] = eta(lay_.index_b(e.m, e.x, l));
      return divmod(Polynomial(c), e.b).first;
    }
    throw InvalidConstraints("no excitation row to infer the immersion factor from");
  }

 private:
  struct AEntry {
    int i, m, l;
  };
  struct BEntry {
    int m, x;
    Polynomial b;
  };
  bool determined_b(int m, int x) const {
    for (const auto& e : bfac_)
      if (e.m == m && e.x == x) return true;
    return false;
  }

  ParamLayout lay_;
  int LJ_, deg_;
  double d0_ = 1.0;
  std::vector<AEntry> a_;
  std::vector<BEntry> bfac_;
  std::vector<int> direct_;
  std::vector<std::pair<int, double>> pins_;
};

struct LmOutcome {
  Eigen::VectorXd phi;
  double initial_cost = 0.0, final_cost = 0.0;
  std::vector<double> accepted;
  int iterations = 0;
  bool converged = false;
};

// Weighted residuals over the band, optionally with d r / d phi (2L rows per bin,
// real and imaginary parts interleaved as in smle_cost). False when A is
// numerically singular somewhere.
bool factored_eval(const FactoredImmersed& fm, const Eigen::VectorXd& phi, const SpectralDataset& ds,
                   const NonparamEstimate& np, const std::vector<Eigen::MatrixXcd>& Linv, const ParamLayout& lay,
                   double& cost, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
  const DCNModel m = lay.unpack(fm.eta(phi));
  const int L = lay.L, F = ds.F();
  const int maxo = std::max({lay.n_a, lay.n_b, lay.n_c});
  r.resize(2 * static_cast<Eigen::Index>(L) * F);
  if (J) J->resize(r.size(), fm.size());
  Eigen::MatrixXcd G(L, fm.size());
  std::vector<cplx> pw(maxo + 1);
  double acc = 0.0;
  for (int k = 0; k < F; ++k) {
    const cplx om = ds.Omega(k);
    pw[0] = 1.0;
    for (int l = 1; l <= maxo; ++l) pw[l] = pw[l - 1] * om;
    const Eigen::MatrixXcd A = eval_at(m.A, om);
    const Eigen::VectorXcd u = eval_at(m.B, om) * ds.R.col(k) + eval_at(m.C, om).col(0);
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(A);
    if (!(lu_rcond(lu) > 1e-14)) return false;
    const Eigen::VectorXcd x = lu.solve(u);
    const Eigen::VectorXcd rk = Linv[k] * (np.W.col(k) - x);
    acc += rk.squaredNorm();
    for (int i = 0; i < L; ++i) {
      r(2 * (k * L + i)) = rk(i).real();
      r(2 * (k * L + i) + 1) = rk(i).imag();
    }
    if (J) {
      fm.bin_jacobian(phi, pw, Linv[k] * lu.inverse(), x, ds.R.col(k), G);
      for (int i = 0; i < L; ++i) {
        J->row(2 * (k * L + i)) = G.row(i).real();
        J->row(2 * (k * L + i) + 1) = G.row(i).imag();
      }
    }
  }
  cost = acc / F;
  return true;
}

LmOutcome factored_lm(const FactoredImmersed& fm, Eigen::VectorXd phi, const SpectralDataset& ds,
                      const NonparamEstimate& np, const std::vector<Eigen::MatrixXcd>& Linv, const ParamLayout& lay,
                      const GnSettings& gn) {
  LmOutcome out;
  double cost = 0.0;
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  out.phi = phi;
  if (!factored_eval(fm, phi, ds, np, Linv, lay, cost, r, &J)) {
    out.initial_cost = out.final_cost = std::numeric_limits<double>::infinity();
    return out;
  }
  out.initial_cost = cost;
  out.accepted.push_back(cost);
  const int P = fm.size();
  double lambda = gn.lambda0;
  Eigen::VectorXd rt;
  for (int it = 1; it <= gn.max_iter; ++it) {
    const Eigen::VectorXd diag = J.colwise().squaredNorm().transpose().cwiseMax(1e-300);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(J);
    const Eigen::MatrixXd R = qr.matrixQR().topRows(P).triangularView<Eigen::Upper>();
    const Eigen::VectorXd qtr = (qr.householderQ().transpose() * r).head(P);

    bool accepted = false;
    double rel = 0.0;
    while (lambda <= gn.lambda_max) {
      Eigen::MatrixXd Aug(2 * P, P);
      Aug.topRows(P) = R;
      Aug.bottomRows(P) = (lambda * diag).cwiseSqrt().asDiagonal();
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2 * P);
      rhs.head(P) = -qtr;
      const Eigen::VectorXd trial = phi + Aug.householderQr().solve(rhs);
      double tc = 0.0;
      if (factored_eval(fm, trial, ds, np, Linv, lay, tc, rt, nullptr) && tc < cost) {
        rel = (cost - tc) / cost;
        phi = trial;
        cost = tc;
        out.accepted.push_back(cost);
        out.iterations = it;
        lambda = std::max(lambda * gn.lambda_down, 1e-15);
        accepted = true;
        break;
      }
      lambda *= gn.lambda_up;
    }
    if (!accepted || rel < gn.rel_cost_tol) {
      out.converged = true;
      break;
    }
    factored_eval(fm, phi, ds, np, Linv, lay, cost, r, &J);
  }
  out.phi = phi;
  out.final_cost = cost;
  return out;
}

}  // namespace

StructuredFit structured_refine(const Eigen::VectorXd& eta0, const SpectralDataset& ds, const NonparamEstimate& np,
                                const ParamLayout& lay, const ConstraintSet& cs, const Partition& part,
                                const RLCNetwork& design, const GnSettings& gn, bool try_nominal) {
  if (eta0.size() != lay.size()) throw DimensionMismatch("eta0 does not match the immersed layout");
  const DCNModel md = rlc_to_dcn(design, lay.n_c);
  const ImmersedModel im = kron_reduce(md, part);
  const FactoredImmersed fm(lay, cs, part, design, md, im.d_II.degree());
  const std::vector<int> M = part.M();
  const int LJ = static_cast<int>(part.J.size());

  // Start 1: the given estimate, with the subnetwork read off by the Q1 fit.
  const SubnetLayout sl{LJ, static_cast<int>(part.D.size()), lay.K, 2, md.B.max_order()};
  const SubnetEstimate sub = recover_subnet(lay.unpack(eta0), ds.omega, sl, subnet_constraints(sl, part, design, md.B));
  PolynomialMatrix AJ(LJ, static_cast<int>(M.size()));
  for (int i = 0; i < LJ; ++i)
    for (int m = 0; m < static_cast<int>(M.size()); ++m)
      AJ(i, m) = m < LJ ? sub.A_JJ(i, m) : sub.A_JD(i, m - LJ);
  const auto Linv = inverse_weight_factors(np, gn.epsilon_w);
  std::vector<Eigen::VectorXd> starts{fm.phi(eta0, AJ, fm.factor_from(eta0))};

  // Start 2: the design network's own reduction.
  if (try_nominal) {
    Eigen::VectorXd eta_nom = lay.pack(im.A_im, im.B_im, PolynomialMatrix(lay.L, 1));
    const Polynomial d_nom = fm.factor_from(eta_nom);
    eta_nom *= fm.d(Eigen::VectorXd::Zero(fm.size())).coeff(0) / d_nom.coeff(0);
    starts.push_back(fm.phi(eta_nom, md.A.block(part.J, M), d_nom));
  }
  // Only the start with the lower cost is refined; the other is the fallback
  // if that one cannot be evaluated.
  std::vector<double> c0(starts.size(), std::numeric_limits<double>::infinity());
  Eigen::VectorXd r;
  for (size_t i = 0; i < starts.size(); ++i) {
    double c = 0.0;
    if (factored_eval(fm, starts[i], ds, np, Linv, lay, c, r, nullptr)) c0[i] = c;
  }
  std::vector<size_t> order(starts.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return c0[a] < c0[b]; });
  LmOutcome best;
  size_t used = order[0];
  for (size_t i : order) {
    best = factored_lm(fm, starts[i], ds, np, Linv, lay, gn);
    used = i;
    if (std::isfinite(best.final_cost)) break;
  }
  if (!std::isfinite(best.final_cost)) throw SingularFrequency("no start gives a nonsingular immersed model in band");
  const bool nominal = used == 1;

  StructuredFit out;
  out.eta = fm.eta(best.phi);
  out.initial_cost = best.initial_cost;
  out.final_cost = best.final_cost;
  out.accepted_costs = std::move(best.accepted);
  out.iterations = best.iterations;
  out.converged = best.converged;
  out.nominal_start = nominal;
  return out;
}

}  // namespace dcnid
