#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcnid/netmodel.hpp"

namespace dcnid {

// Philox4x32-10 (Salmon et al., SC'11). Counter-based, so every
// (seed, stream) pair is an independent reproducible sequence and Monte-Carlo
// runs do not depend on scheduling.
class Philox {
 public:
  Philox(std::uint64_t seed, std::uint64_t stream);

  std::array<std::uint32_t, 4> next_block();
  std::uint32_t next_u32();
  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();
  /// Standard normal via Box-Muller; caches the second deviate.
  double normal();

 private:
  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> ctr_;
  std::array<std::uint32_t, 4> buf_{};
  int buf_pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Substream ids within one run seed.
inline constexpr std::uint64_t kStreamExcitation = 0;  // + excitation index
inline constexpr std::uint64_t kStreamNoise = 1000;    // + node index
inline constexpr std::uint64_t kStreamTransient = 2000;

struct ExperimentConfig {
  int N = 20000;
  double fs = 20000.0;
  double sigma_r2 = 1.0;
  double sigma_e2 = 0.0;
  double f_min = 500.0;
  double f_max = 4000.0;
  std::uint64_t seed = 1;
  double transient_scale = 0.0;

  void check() const;  // throws InvalidConfig
};

/// DFT-domain records on a set of grid indices. For a full-grid dataset
/// band_indices = 0..N-1.
struct SpectralDataset {
  int N = 0;
  double fs = 0.0;
  std::vector<int> band_indices;
  Eigen::VectorXd omega;  // rad/s, one per band index
  Eigen::MatrixXcd R;     // K x F
  Eigen::MatrixXcd W;     // L x F

  int F() const { return static_cast<int>(band_indices.size()); }
  int L() const { return static_cast<int>(W.rows()); }
  int K() const { return static_cast<int>(R.rows()); }
  cplx Omega(int i) const { return {0.0, omega(i)}; }
  /// Keeps only the listed node rows of W (measured subset).
  SpectralDataset restrict_nodes(const std::vector<int>& nodes) const;
};

/// S(k) = N^{-1/2} sum_n s(n) e^{-j 2 pi k n / N}.
Eigen::VectorXcd dft(const Eigen::VectorXd& s);
Eigen::VectorXcd dft(const Eigen::VectorXcd& s);
/// Inverse with the same 1/sqrt(N) scaling.
Eigen::VectorXcd idft(const Eigen::VectorXcd& S);

struct Excitation {
  Eigen::MatrixXd r;   // K x N time series
  Eigen::MatrixXcd R;  // K x N DFT
};

/// One white Gaussian sequence (variance sigma_r2) per excitation channel.
Excitation generate_excitation(const ExperimentConfig& cfg, int K);

/// Frequency-domain synthesis on the full grid. When c_synth is non-null it
/// receives the transient polynomial actually injected (zero if disabled).
SpectralDataset synth_frequency_data(const DCNModel& model, const ExperimentConfig& cfg,
                                     const Eigen::MatrixXcd& R, PolynomialMatrix* c_synth = nullptr);

SpectralDataset select_band(const SpectralDataset& full, double f_min, double f_max);

void write_dataset_csv(const SpectralDataset& ds, const std::string& path);

}  // namespace dcnid
