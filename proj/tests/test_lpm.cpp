#include <doctest.h>

#include <cmath>

#include "dcnid/errors.hpp"
#include "dcnid/lpm.hpp"

using namespace dcnid;

namespace {

// Dataset whose FRF and transient are exact cubic polynomials in the bin index,
// so a tau = 3 local model fits with zero residual.
SpectralDataset cubic_dataset(int F, int L, int K, unsigned seed) {
  Philox p(seed, 0);
  SpectralDataset ds;
  ds.N = 4 * F;
  ds.fs = 1000.0;
  ds.band_indices.resize(F);
  ds.omega.resize(F);
  ds.R.resize(K, F);
  ds.W.resize(L, F);
  for (int k = 0; k < F; ++k) {
    ds.band_indices[k] = 10 + k;
    ds.omega(k) = 2.0 * M_PI * (10 + k) * ds.fs / ds.N;
    for (int x = 0; x < K; ++x) ds.R(x, k) = cplx(p.normal(), p.normal());
  }
  std::vector<std::vector<cplx>> g(L * K, std::vector<cplx>(4)), t(L, std::vector<cplx>(4));
  for (auto& c : g)
    for (auto& v : c) v = cplx(p.normal(), p.normal());
  for (auto& c : t)
    for (auto& v : c) v = cplx(p.normal(), p.normal());
  for (int k = 0; k < F; ++k) {
    const double s = k / static_cast<double>(F);
    for (int j = 0; j < L; ++j) {
      cplx w = 0.0;
      for (int x = 0; x < K; ++x) {
        const auto& c = g[j * K + x];
        w += (c[0] + s * (c[1] + s * (c[2] + s * c[3]))) * ds.R(x, k);
      }
      const auto& c = t[j];
      w += c[0] + s * (c[1] + s * (c[2] + s * c[3]));
      ds.W(j, k) = w;
    }
  }
  return ds;
}

}  // namespace

TEST_CASE("window size follows the degrees-of-freedom rule") {
  LpmSettings s;
  // tau = 3, K = 1: 8 regressors; L = 2 needs 2n+1 >= 12
  CHECK(s.resolved_n(2, 1) == 6);
  CHECK(s.dof(2, 1) == 13 - 8);
  s.n = 3;
  CHECK_THROWS_AS(s.resolved_n(2, 1), InvalidConfig);
  s.n = 4;
  CHECK(s.dof(2, 1) == 1);
}

TEST_CASE("local design shifts inward at the band edges") {
  const SpectralDataset ds = cubic_dataset(40, 2, 1, 1);
  LpmSettings s;
  s.n = 5;
  const LocalWindow w0 = local_design(ds, 0, s);
  CHECK(w0.center_col == 0);
  CHECK(w0.offsets.front() == 0);
  CHECK(w0.offsets.back() == 10);
  const LocalWindow wm = local_design(ds, 20, s);
  CHECK(wm.center_col == 5);
  CHECK(wm.offsets.front() == -5);
  const LocalWindow we = local_design(ds, 39, s);
  CHECK(we.center_col == 10);
  // row layout: r^p R first, then r^p
  CHECK(wm.Zn(1, 0) == -5.0 * ds.R(0, 15));
  CHECK(wm.Zn(4, 0) == 1.0);
  CHECK(wm.Zn(5, 0) == -5.0);
  CHECK_THROWS_AS(local_design(ds, 40, s), WindowOutOfGrid);

  SpectralDataset gap = ds;
  gap.band_indices[18] += 100;
  for (int i = 19; i < 40; ++i) gap.band_indices[i] += 100;
  CHECK_THROWS_AS(local_design(gap, 18, s), WindowOutOfGrid);
}

TEST_CASE("exact local polynomials leave no residual") {
  const SpectralDataset ds = cubic_dataset(60, 3, 2, 2);
  LpmSettings s;
  const NonparamEstimate np = run_lpm(ds, s);
  for (int k = 0; k < ds.F(); k += 5) {
    CHECK((np.W.col(k) - ds.W.col(k)).norm() < 1e-9 * ds.W.col(k).norm());
    CHECK(np.Cv[k].cwiseAbs().maxCoeff() < 1e-18 + 1e-12 * ds.W.col(k).squaredNorm());
  }
}

TEST_CASE("projection diagonal matches the dense projector") {
  const SpectralDataset ds = cubic_dataset(40, 2, 1, 3);
  LpmSettings s;
  s.n = 7;
  const LocalWindow w = local_design(ds, 12, s);
  const LpmFit fit = lpm_fit(w.Wn, w.Zn);
  const Eigen::MatrixXcd& Z = w.Zn;
  const Eigen::MatrixXcd P = Z.adjoint() * (Z * Z.adjoint()).inverse() * Z;
  for (int c = 0; c < Z.cols(); ++c) CHECK(fit.proj_diag(c) == doctest::Approx(P(c, c).real()).epsilon(1e-9));
  CHECK(fit.proj_diag.sum() == doctest::Approx(static_cast<double>(Z.rows())).epsilon(1e-9));
  // residual is the projection onto the orthogonal complement
  const Eigen::MatrixXcd V = w.Wn * (Eigen::MatrixXcd::Identity(Z.cols(), Z.cols()) - P);
  CHECK((V - fit.V).norm() < 1e-9 * w.Wn.norm());

  Eigen::VectorXcd wh;
  Eigen::MatrixXcd cw;
  const Eigen::MatrixXcd Cv = Eigen::MatrixXcd::Identity(2, 2);
  sample_mean_cov(fit, 1, s.tau, w.center_col, Cv, ds.R.col(12), wh, cw);
  CHECK(cw(0, 0).real() == doctest::Approx(P(w.center_col, w.center_col).real()));
  CHECK((wh - ds.W.col(12)).norm() < 1e-9 * ds.W.col(12).norm());
}

TEST_CASE("rank-deficient windows are rejected") {
  SpectralDataset ds = cubic_dataset(40, 1, 1, 4);
  ds.R.setZero();
  LpmSettings s;
  CHECK_THROWS_AS(run_lpm(ds, s), RankDeficientWindow);
}

TEST_CASE("noise covariance is unbiased for white residuals") {
  // Pure noise with variance 2 per complex bin: E[V V^H] = sigma^2 dof.
  Philox p(11, 0);
  SpectralDataset ds = cubic_dataset(3000, 2, 1, 5);
  for (int k = 0; k < ds.F(); ++k)
    for (int j = 0; j < 2; ++j) ds.W(j, k) = cplx(p.normal(), p.normal());
  const NonparamEstimate np = run_lpm(ds, LpmSettings{});
  double acc = 0.0;
  for (const auto& c : np.Cv) acc += c(0, 0).real() + c(1, 1).real();
  CHECK(acc / (2.0 * np.F()) == doctest::Approx(2.0).epsilon(0.05));
  for (int k = 0; k < np.F(); k += 97) CHECK((np.rho[k] > 0.0 && np.rho[k] < 1.0));
}

TEST_CASE("PSD repair clips negative eigenvalues only") {
  Eigen::MatrixXcd M(2, 2);
  M << 2.0, 0.0, 0.0, 1.0;
  CHECK((repair_psd(M) - M).norm() == 0.0);
  M << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  const Eigen::MatrixXcd R = repair_psd(M, 1e-3);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(R);
  CHECK(es.eigenvalues()(0) == doctest::Approx(1e-3 * 2.0));
  CHECK(es.eigenvalues()(1) == doctest::Approx(3.0));
  CHECK((R - R.adjoint()).norm() == 0.0);
  const Eigen::MatrixXcd F = repair_psd(Eigen::MatrixXcd::Zero(2, 2), 1e-12, 0.5);
  CHECK(F(0, 0).real() == doctest::Approx(0.5));
}
