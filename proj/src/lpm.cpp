#include "dcnid/lpm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "dcnid/errors.hpp"

namespace dcnid {

int LpmSettings::resolved_n(int L, int K) const {
  if (tau < 0) throw InvalidConfig("LPM order tau must be >= 0");
  if (n >= 0) {
    if (2 * n + 1 - (tau + 1) * (K + 1) < 1) throw InvalidConfig("LPM window leaves no residual degrees of freedom");
    return n;
  }
  const int need = L + 2 + (tau + 1) * (K + 1);  // 2n+1 >= need
  return std::max(1, need / 2);
}

LocalWindow local_design(const SpectralDataset& ds, int i, const LpmSettings& s) {
  const int K = ds.K();
  const int n = s.resolved_n(ds.L(), K);
  const int width = 2 * n + 1;
  const int F = ds.F();
  if (i < 0 || i >= F) throw WindowOutOfGrid("window centre outside the dataset");
  if (width > F) throw WindowOutOfGrid("LPM window wider than the available band");
  const int start = std::clamp(i - n, 0, F - width);
  if (ds.band_indices[start + width - 1] - ds.band_indices[start] != width - 1)
    throw WindowOutOfGrid("LPM window spans non-consecutive bins");

  const int tau = s.tau;
  LocalWindow w;
  w.Wn = ds.W.middleCols(start, width);
  w.Zn.resize((tau + 1) * (K + 1), width);
  w.offsets.resize(width);
  w.center_col = i - start;
  for (int c = 0; c < width; ++c) {
    const int r = start + c - i;
    w.offsets[c] = r;
    double rp = 1.0;
    for (int p = 0; p <= tau; ++p) {
      for (int x = 0; x < K; ++x) w.Zn(p * K + x, c) = rp * ds.R(x, start + c);
      w.Zn((tau + 1) * K + p, c) = rp;
      rp *= r;
    }
  }
  return w;
}

LpmFit lpm_fit(const Eigen::MatrixXcd& Wn, const Eigen::MatrixXcd& Zn) {
  if (Wn.cols() != Zn.cols()) throw DimensionMismatch("W_n and Z_n must have the same column count");
  const Eigen::Index rows = Zn.rows();
  // Row equilibration: offsets reach r^tau, so raw rows differ by decades.
  Eigen::VectorXd d(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double nr = Zn.row(r).norm();
    if (nr == 0.0) throw RankDeficientWindow("excitation is identically zero across the window");
    d(r) = 1.0 / nr;
  }
  const Eigen::MatrixXcd Zs = d.asDiagonal() * Zn;
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(Zs.adjoint(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv.size() < rows || sv(rows - 1) <= 1e-12 * sv(0))
    throw RankDeficientWindow("local design matrix is rank deficient");
  const Eigen::MatrixXcd& U = svd.matrixU();  // (2n+1) x rows
  const Eigen::MatrixXcd WU = Wn * U;
  LpmFit fit;
  fit.Theta = WU * sv.cwiseInverse().asDiagonal() * svd.matrixV().adjoint() * d.asDiagonal();
  fit.V = Wn - WU * U.adjoint();
  fit.proj_diag = U.rowwise().squaredNorm();
  return fit;
}

Eigen::MatrixXcd noise_covariance(const Eigen::MatrixXcd& V, int dof) {
  if (dof < 1) throw InvalidConfig("noise covariance needs dof >= 1");
  Eigen::MatrixXcd C = V * V.adjoint() / static_cast<double>(dof);
  return 0.5 * (C + C.adjoint());
}

Eigen::MatrixXcd repair_psd(const Eigen::MatrixXcd& M, double rel, double abs_floor) {
  const Eigen::MatrixXcd H = 0.5 * (M + M.adjoint());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
  const double tr = H.trace().real();
  const double floor = std::max(rel * std::max(tr, 0.0), abs_floor);
  Eigen::VectorXd ev = es.eigenvalues();
  if (ev.minCoeff() >= floor) return H;
  ev = ev.cwiseMax(floor);
  Eigen::MatrixXcd out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().adjoint();
  return 0.5 * (out + out.adjoint());
}

void sample_mean_cov(const LpmFit& fit, int K, int tau, int center_col, const Eigen::MatrixXcd& Cv,
                     const Eigen::VectorXcd& Rk, Eigen::VectorXcd& W_hat, Eigen::MatrixXcd& Cw_hat) {
  const Eigen::MatrixXcd G = fit.Theta.leftCols(K);
  const Eigen::VectorXcd T = fit.Theta.col((tau + 1) * K);
  W_hat = G * Rk + T;
  Cw_hat = fit.proj_diag(center_col) * Cv;
}

NonparamEstimate run_lpm(const SpectralDataset& ds, const LpmSettings& s) {
  const int L = ds.L();
  const int K = ds.K();
  const int F = ds.F();
  const int dof = s.dof(L, K);
  NonparamEstimate np;
  np.dof = dof;
  np.G.resize(F);
  np.T.resize(F);
  np.Cv.resize(F);
  np.Cw.resize(F);
  np.rho.resize(F);
  np.W.resize(L, F);
  for (int i = 0; i < F; ++i) {
    const LocalWindow w = local_design(ds, i, s);
    const LpmFit fit = lpm_fit(w.Wn, w.Zn);
    np.G[i] = fit.Theta.leftCols(K);
    np.T[i] = fit.Theta.col((s.tau + 1) * K);
    np.Cv[i] = repair_psd(noise_covariance(fit.V, dof));
    Eigen::VectorXcd wh;
    Eigen::MatrixXcd cw;
    sample_mean_cov(fit, K, s.tau, w.center_col, np.Cv[i], ds.R.col(i), wh, cw);
    np.W.col(i) = wh;
    np.Cw[i] = cw;
    np.rho[i] = fit.proj_diag(w.center_col);
  }
  return np;
}

void write_lpm_csv(const SpectralDataset& ds, const NonparamEstimate& np, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path);
  const int L = ds.L();
  const int K = ds.K();
  f << "k,f_hz";
  for (int j = 0; j < L; ++j)
    for (int x = 0; x < K; ++x) f << ",abs_g" << j + 1 << '_' << x + 1 << ",arg_g" << j + 1 << '_' << x + 1;
  for (int j = 0; j < L; ++j) f << ",cv" << j + 1;
  f << '\n' << std::setprecision(12);
  for (int i = 0; i < np.F(); ++i) {
    f << ds.band_indices[i] << ',' << ds.band_indices[i] * ds.fs / ds.N;
    for (int j = 0; j < L; ++j)
      for (int x = 0; x < K; ++x) f << ',' << std::abs(np.G[i](j, x)) << ',' << std::arg(np.G[i](j, x));
    for (int j = 0; j < L; ++j) f << ',' << np.Cv[i](j, j).real();
    f << '\n';
  }
}

}  // namespace dcnid
