#include "dcnid/smle.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dcnid/errors.hpp"

namespace dcnid {

namespace {

constexpr double kMinRcond = 1e-14;

struct BinState {
  Eigen::MatrixXcd Ainv;
  Eigen::VectorXcd x;  // A^-1 (B R + C)
  Eigen::MatrixXcd P;  // Lc^-1 A^-1
  Eigen::VectorXcd r;  // Lc^-1 (W_hat - x)
};

bool eval_bin(const DCNModel& m, const SpectralDataset& ds, const NonparamEstimate& np,
              const Eigen::MatrixXcd& Linv, int k, bool need_inverse, BinState& st) {
  const cplx om = ds.Omega(k);
  const Eigen::MatrixXcd A = eval_at(m.A, om);
  const Eigen::VectorXcd u = eval_at(m.B, om) * ds.R.col(k) + eval_at(m.C, om).col(0);
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(A);
  if (!(lu_rcond(lu) > kMinRcond)) return false;
  st.x = lu.solve(u);
  st.r = Linv * (np.W.col(k) - st.x);
  if (need_inverse) {
    st.Ainv = lu.inverse();
    st.P = Linv * st.Ainv;
  }
  return true;
}

// Forward-difference columns at one bin. Each column is r(theta + h e_j) - r(theta)
// divided by the step in scaled units; the perturbed solve is done exactly by a
// rank-one/rank-two update of A^-1 instead of a fresh factorisation.
void jacobian_bin(const BinState& st, const SpectralDataset& ds, int k, const std::vector<int>& free_idx,
                  const Eigen::VectorXd& scale, const Eigen::VectorXd& theta, const ParamLayout& lay,
                  Eigen::Ref<Eigen::MatrixXd> Jt) {
  const int L = lay.L;
  const cplx om = ds.Omega(k);
  const int maxo = std::max({lay.n_a, lay.n_b, lay.n_c});
  std::vector<cplx> pw(maxo + 1);
  pw[0] = 1.0;
  for (int l = 1; l <= maxo; ++l) pw[l] = pw[l - 1] * om;
  Eigen::VectorXcd dr(L);
  for (size_t c = 0; c < free_idx.size(); ++c) {
    const int idx = free_idx[c];
    const double xj = theta(idx) / scale(c);
    const double hx = std::max(1e-7, 1e-7 * std::abs(xj));
    const double dth = hx * scale(c);
    const auto co = lay.coord(idx);
    const cplx d = dth * pw[co.l];
    switch (co.block) {
      case ParamLayout::Block::A: {
        const int i = co.i, j = co.j;
        if (i == j) {
          dr = st.P.col(i) * (d * st.x(i) / (1.0 + d * st.Ainv(i, i)));
        } else {
          Eigen::Matrix2cd M;
          M << 1.0 / d + st.Ainv(j, i), st.Ainv(j, j), st.Ainv(i, i), 1.0 / d + st.Ainv(i, j);
          const Eigen::Vector2cd y = M.partialPivLu().solve(Eigen::Vector2cd(st.x(j), st.x(i)));
          dr = st.P.col(i) * y(0) + st.P.col(j) * y(1);
        }
        break;
      }
      case ParamLayout::Block::B:
        dr = -(d * ds.R(co.j, k)) * st.P.col(co.i);
        break;
      case ParamLayout::Block::C:
        dr = -d * st.P.col(co.i);
        break;
    }
    for (int r = 0; r < L; ++r) {
      Jt(c, 2 * r) = dr(r).real() / hx;
      Jt(c, 2 * r + 1) = dr(r).imag() / hx;
    }
  }
}

double cost_of(const DCNModel& m, const SpectralDataset& ds, const NonparamEstimate& np,
               const std::vector<Eigen::MatrixXcd>& Linv) {
  BinState st;
  double acc = 0.0;
  for (int k = 0; k < ds.F(); ++k) {
    if (!eval_bin(m, ds, np, Linv[k], k, false, st)) return std::numeric_limits<double>::infinity();
    acc += st.r.squaredNorm();
  }
  return acc / ds.F();
}

}  // namespace

std::vector<Eigen::MatrixXcd> inverse_weight_factors(const NonparamEstimate& np, double epsilon_w) {
  const double floor = weight_floor(np, epsilon_w);
  std::vector<Eigen::MatrixXcd> out(np.F());
  for (int k = 0; k < np.F(); ++k) {
    const Eigen::MatrixXcd Lc = weight_factor(np.Cw[k], floor);
    out[k] = Lc.triangularView<Eigen::Lower>().solve(Eigen::MatrixXcd::Identity(Lc.rows(), Lc.cols()));
  }
  return out;
}

SmleCost smle_cost(const Eigen::VectorXd& theta, const SpectralDataset& ds, const NonparamEstimate& np,
                   const ParamLayout& layout, double epsilon_w) {
  const auto Linv = inverse_weight_factors(np, epsilon_w);
  const DCNModel m = layout.unpack(theta);
  const int L = layout.L;
  SmleCost out;
  out.residuals.resize(2 * static_cast<Eigen::Index>(L) * ds.F());
  BinState st;
  double acc = 0.0;
  for (int k = 0; k < ds.F(); ++k) {
    if (!eval_bin(m, ds, np, Linv[k], k, false, st)) {
      out.cost = std::numeric_limits<double>::infinity();
      return out;
    }
    acc += st.r.squaredNorm();
    for (int r = 0; r < L; ++r) {
      out.residuals(2 * (k * L + r)) = st.r(r).real();
      out.residuals(2 * (k * L + r) + 1) = st.r(r).imag();
    }
  }
  out.cost = acc / ds.F();
  return out;
}

Eigen::VectorXd smle_scales(const Eigen::VectorXd& theta0, const std::vector<int>& free_idx, const ParamLayout& layout) {
  std::map<std::pair<int, int>, std::vector<double>> groups;
  auto key = [&](int idx) {
    const auto c = layout.coord(idx);
    return std::make_pair(static_cast<int>(c.block), c.l);
  };
  for (int idx : free_idx)
    if (theta0(idx) != 0.0) groups[key(idx)].push_back(std::abs(theta0(idx)));
  std::map<std::pair<int, int>, double> med;
  for (auto& [k, v] : groups) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    med[k] = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
  Eigen::VectorXd s(static_cast<Eigen::Index>(free_idx.size()));
  for (size_t c = 0; c < free_idx.size(); ++c) {
    auto it = med.find(key(free_idx[c]));
    s(static_cast<Eigen::Index>(c)) = it != med.end() ? it->second : 1.0;
  }
  return s;
}

Eigen::MatrixXd smle_jacobian(const Eigen::VectorXd& theta, const std::vector<int>& free_idx,
                              const Eigen::VectorXd& scale, const SpectralDataset& ds,
                              const NonparamEstimate& np, const ParamLayout& layout, double epsilon_w) {
  const auto Linv = inverse_weight_factors(np, epsilon_w);
  const DCNModel m = layout.unpack(theta);
  const int L = layout.L;
  const int Pf = static_cast<int>(free_idx.size());
  Eigen::MatrixXd Jt(Pf, 2 * static_cast<Eigen::Index>(L) * ds.F());
  BinState st;
  for (int k = 0; k < ds.F(); ++k) {
    if (!eval_bin(m, ds, np, Linv[k], k, true, st)) throw SingularFrequency("A singular while forming the Jacobian");
    jacobian_bin(st, ds, k, free_idx, scale, theta, layout, Jt.middleCols(2 * k * L, 2 * L));
  }
  return Jt.transpose();
}

SmleResult smle_refine(const Eigen::VectorXd& theta0, const std::vector<bool>& free_mask, const SpectralDataset& ds,
                       const NonparamEstimate& np, const ParamLayout& layout, const GnSettings& settings) {
  const int P = layout.size();
  if (theta0.size() != P || static_cast<int>(free_mask.size()) != P)
    throw DimensionMismatch("theta0 / free mask do not match the layout");
  const int L = layout.L;
  const int F = ds.F();
  std::vector<int> free_idx;
  for (int i = 0; i < P; ++i)
    if (free_mask[i]) free_idx.push_back(i);
  const int Pf = static_cast<int>(free_idx.size());
  const Eigen::VectorXd scale = smle_scales(theta0, free_idx, layout);
  const auto Linv = inverse_weight_factors(np, settings.epsilon_w);

  SmleResult res;
  res.theta = theta0;
  DCNModel model = layout.unpack(theta0);
  double cost = cost_of(model, ds, np, Linv);
  res.initial_cost = cost;
  res.accepted_costs.push_back(cost);
  if (!std::isfinite(cost)) throw SingularFrequency("initial estimate has a singular A in band");
  if (Pf == 0) {
    res.final_cost = cost;
    res.converged = true;
    return res;
  }

  constexpr int kChunkBins = 128;
  const int chunk_cols = settings.use_qr ? 2 * L * F : 2 * L * kChunkBins;
  Eigen::MatrixXd Jt(Pf, chunk_cols);
  Eigen::VectorXd rbuf(chunk_cols);
  double lambda = settings.lambda0;
  BinState st;
  for (int it = 1; it <= settings.max_iter; ++it) {
    Eigen::MatrixXd JtJ = Eigen::MatrixXd::Zero(Pf, Pf);
    Eigen::VectorXd Jtr = Eigen::VectorXd::Zero(Pf);
    int filled = 0;
    auto flush = [&]() {
      if (filled == 0 || settings.use_qr) return;
      JtJ.selfadjointView<Eigen::Lower>().rankUpdate(Jt.leftCols(filled));
      Jtr.noalias() += Jt.leftCols(filled) * rbuf.head(filled);
      filled = 0;
    };
    for (int k = 0; k < F; ++k) {
      if (!eval_bin(model, ds, np, Linv[k], k, true, st)) throw SingularFrequency("A singular at accepted iterate");
      jacobian_bin(st, ds, k, free_idx, scale, res.theta, layout, Jt.middleCols(filled, 2 * L));
      for (int r = 0; r < L; ++r) {
        rbuf(filled + 2 * r) = st.r(r).real();
        rbuf(filled + 2 * r + 1) = st.r(r).imag();
      }
      filled += 2 * L;
      if (filled == Jt.cols()) flush();
    }
    flush();

    // QR variant: J = Q R once per iteration, then each damped step is the
    // small problem min ||R d + Q^T r||^2 + lambda ||D d||^2.
    Eigen::VectorXd diag;
    Eigen::MatrixXd Rj;
    Eigen::VectorXd qtr;
    if (settings.use_qr) {
      Eigen::MatrixXd Jf = Jt.transpose();
      diag = Jf.colwise().squaredNorm().transpose().cwiseMax(1e-300);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(Jf);
      Rj = qr.matrixQR().topRows(Pf).triangularView<Eigen::Upper>();
      qtr = (qr.householderQ().transpose() * rbuf).head(Pf);
    } else {
      JtJ = JtJ.selfadjointView<Eigen::Lower>();
      diag = JtJ.diagonal().cwiseMax(1e-300);
    }
    auto step = [&](double lam) -> Eigen::VectorXd {
      if (!settings.use_qr) {
        Eigen::MatrixXd M = JtJ;
        M.diagonal() += lam * diag;
        return M.ldlt().solve(-Jtr);
      }
      Eigen::MatrixXd Aug(2 * Pf, Pf);
      Aug.topRows(Pf) = Rj;
      Aug.bottomRows(Pf) = (lam * diag).cwiseSqrt().asDiagonal();
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2 * Pf);
      rhs.head(Pf) = -qtr;
      return Aug.householderQr().solve(rhs);
    };

    bool accepted = false;
    double rel = 0.0;
    while (lambda <= settings.lambda_max) {
      const Eigen::VectorXd delta = step(lambda);
      Eigen::VectorXd trial = res.theta;
      for (int c = 0; c < Pf; ++c) trial(free_idx[c]) += scale(c) * delta(c);
      const DCNModel tm = layout.unpack(trial);
      const double tc = cost_of(tm, ds, np, Linv);
      if (tc < cost) {
        rel = (cost - tc) / cost;
        res.history.push_back({it, tc, lambda, delta.norm()});
        res.theta = trial;
        model = tm;
        cost = tc;
        res.accepted_costs.push_back(cost);
        lambda = std::max(lambda * settings.lambda_down, 1e-15);
        accepted = true;
        break;
      }
      lambda *= settings.lambda_up;
    }
    if (!accepted || rel < settings.rel_cost_tol) {
      res.converged = true;
      break;
    }
  }
  res.final_cost = cost;
  return res;
}

}  // namespace dcnid
