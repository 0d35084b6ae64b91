#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcnid/signalgen.hpp"

namespace dcnid {

struct LpmSettings {
  int tau = 3;
  int n = -1;  // half-width; -1 picks the smallest n with dof >= L + 2

  int resolved_n(int L, int K) const;
  int dof(int L, int K) const { return 2 * resolved_n(L, K) + 1 - (tau + 1) * (K + 1); }
};

struct LocalWindow {
  Eigen::MatrixXcd Wn;       // L x (2n+1)
  Eigen::MatrixXcd Zn;       // (tau+1)(K+1) x (2n+1)
  std::vector<int> offsets;  // r for each column, relative to the centre bin
  int center_col = 0;        // column holding r = 0
};

/// Window of 2n+1 consecutive dataset bins around position i, shifted inward
/// at the band edges. Rows of Z: [1, r, .., r^tau] (x) R(k+r), then [1, .., r^tau].
LocalWindow local_design(const SpectralDataset& ds, int i, const LpmSettings& s);

struct LpmFit {
  Eigen::MatrixXcd Theta;      // L x (tau+1)(K+1)
  Eigen::MatrixXcd V;          // L x (2n+1) residual
  Eigen::VectorXd proj_diag;   // diagonal of Z^H (Z Z^H)^-1 Z
};

LpmFit lpm_fit(const Eigen::MatrixXcd& Wn, const Eigen::MatrixXcd& Zn);

Eigen::MatrixXcd noise_covariance(const Eigen::MatrixXcd& V, int dof);

/// Hermitian part with eigenvalues clipped from below at
/// max(rel * trace, abs_floor).
Eigen::MatrixXcd repair_psd(const Eigen::MatrixXcd& M, double rel = 1e-12, double abs_floor = 0.0);

struct NonparamEstimate {
  std::vector<Eigen::MatrixXcd> G;   // L x K per bin
  std::vector<Eigen::VectorXcd> T;   // L per bin
  std::vector<Eigen::MatrixXcd> Cv;  // L x L per bin
  Eigen::MatrixXcd W;                // L x F sample mean
  std::vector<Eigen::MatrixXcd> Cw;  // L x L per bin
  std::vector<double> rho;
  int dof = 0;

  int F() const { return static_cast<int>(Cw.size()); }
};

/// Ŵ = Ĝ R(k) + T̂ and Ĉ_W = rho Ĉ_V for one window.
void sample_mean_cov(const LpmFit& fit, int K, int tau, int center_col, const Eigen::MatrixXcd& Cv,
                     const Eigen::VectorXcd& Rk, Eigen::VectorXcd& W_hat, Eigen::MatrixXcd& Cw_hat);

NonparamEstimate run_lpm(const SpectralDataset& ds, const LpmSettings& s);

void write_lpm_csv(const SpectralDataset& ds, const NonparamEstimate& np, const std::string& path);

}  // namespace dcnid
