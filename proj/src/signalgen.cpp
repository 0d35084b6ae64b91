#include "dcnid/signalgen.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>

#include <fftw3.h>

#include "dcnid/errors.hpp"

namespace dcnid {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// FFTW planning is not thread-safe; execution on distinct arrays is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

Eigen::VectorXcd fft_c2c(const Eigen::VectorXcd& in, int sign) {
  const int n = static_cast<int>(in.size());
  Eigen::VectorXcd out(n);
  if (n == 0) return out;
  fftw_complex* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan = fftw_plan_dft_1d(n, buf, buf, sign, FFTW_ESTIMATE);
  }
  for (int i = 0; i < n; ++i) {
    buf[i][0] = in(i).real();
    buf[i][1] = in(i).imag();
  }
  fftw_execute(plan);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int i = 0; i < n; ++i) out(i) = cplx(buf[i][0], buf[i][1]) * scale;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(buf);
  return out;
}

}  // namespace

Philox::Philox(std::uint64_t seed, std::uint64_t stream) {
  key_ = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  ctr_ = {0u, 0u, static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
}

std::array<std::uint32_t, 4> Philox::next_block() {
  std::array<std::uint32_t, 4> x = ctr_;
  std::array<std::uint32_t, 2> k = key_;
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, x[0], hi0, lo0);
    mulhilo(kPhiloxM1, x[2], hi1, lo1);
    x = {hi1 ^ x[1] ^ k[0], lo1, hi0 ^ x[3] ^ k[1], lo0};
    k[0] += kPhiloxW0;
    k[1] += kPhiloxW1;
  }
  // 64-bit increment of the low counter words; the high words hold the stream.
  if (++ctr_[0] == 0) ++ctr_[1];
  return x;
}

std::uint32_t Philox::next_u32() {
  if (buf_pos_ >= 4) {
    buf_ = next_block();
    buf_pos_ = 0;
  }
  return buf_[buf_pos_++];
}

double Philox::uniform() {
  const std::uint64_t a = next_u32() >> 5;  // 27 bits
  const std::uint64_t b = next_u32() >> 6;  // 26 bits
  return (static_cast<double>((a << 26) | b) + 0.5) * (1.0 / 9007199254740992.0);
}

double Philox::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double rad = std::sqrt(-2.0 * std::log(u1));
  const double ang = 2.0 * M_PI * u2;
  spare_ = rad * std::sin(ang);
  has_spare_ = true;
  return rad * std::cos(ang);
}

void ExperimentConfig::check() const {
  if (N < 2 || N % 2 != 0) throw InvalidConfig("N must be even and >= 2");
  if (!(fs > 0.0)) throw InvalidConfig("fs must be positive");
  if (!(sigma_r2 > 0.0)) throw InvalidConfig("sigma_r2 must be positive");
  if (!(sigma_e2 >= 0.0)) throw InvalidConfig("sigma_e2 must be non-negative");
  if (!(f_min > 0.0 && f_min < f_max && f_max < fs / 2.0))
    throw InvalidConfig("band must satisfy 0 < f_min < f_max < fs/2");
  if (!(transient_scale >= 0.0)) throw InvalidConfig("transient_scale must be non-negative");
}

SpectralDataset SpectralDataset::restrict_nodes(const std::vector<int>& nodes) const {
  SpectralDataset out = *this;
  out.W.resize(static_cast<Eigen::Index>(nodes.size()), W.cols());
  for (size_t i = 0; i < nodes.size(); ++i) out.W.row(static_cast<Eigen::Index>(i)) = W.row(nodes[i]);
  return out;
}

Eigen::VectorXcd dft(const Eigen::VectorXd& s) { return fft_c2c(s.cast<cplx>(), FFTW_FORWARD); }
Eigen::VectorXcd dft(const Eigen::VectorXcd& s) { return fft_c2c(s, FFTW_FORWARD); }
Eigen::VectorXcd idft(const Eigen::VectorXcd& S) { return fft_c2c(S, FFTW_BACKWARD); }

Excitation generate_excitation(const ExperimentConfig& cfg, int K) {
  if (K < 1) throw InvalidConfig("at least one excitation channel is required");
  Excitation ex;
  ex.r.resize(K, cfg.N);
  ex.R.resize(K, cfg.N);
  const double sd = std::sqrt(cfg.sigma_r2);
  for (int x = 0; x < K; ++x) {
    Philox rng(cfg.seed, kStreamExcitation + x);
    for (int n = 0; n < cfg.N; ++n) ex.r(x, n) = sd * rng.normal();
    ex.R.row(x) = dft(Eigen::VectorXd(ex.r.row(x).transpose())).transpose();
  }
  return ex;
}

SpectralDataset synth_frequency_data(const DCNModel& model, const ExperimentConfig& cfg,
                                     const Eigen::MatrixXcd& R, PolynomialMatrix* c_synth) {
  const int L = model.L();
  const int K = model.K();
  const int N = cfg.N;
  if (R.rows() != K || R.cols() != N) throw DimensionMismatch("excitation DFT must be K x N");

  Eigen::MatrixXcd E = Eigen::MatrixXcd::Zero(L, N);
  if (cfg.sigma_e2 > 0.0) {
    const double sd = std::sqrt(cfg.sigma_e2);
    for (int j = 0; j < L; ++j) {
      Philox rng(cfg.seed, kStreamNoise + j);
      Eigen::VectorXd e(N);
      for (int n = 0; n < N; ++n) e(n) = sd * rng.normal();
      E.row(j) = dft(e).transpose();
    }
  }

  // Synthetic transient: random polynomial normalised to the top of the band so
  // that every order contributes comparably there.
  PolynomialMatrix C(L, 1);
  if (cfg.transient_scale > 0.0) {
    Philox rng(cfg.seed, kStreamTransient);
    const double w_ref = 2.0 * M_PI * cfg.f_max;
    for (int j = 0; j < L; ++j) {
      std::vector<double> c(model.n_c + 1);
      for (int l = 0; l <= model.n_c; ++l) c[l] = cfg.transient_scale * rng.normal() / std::pow(w_ref, l);
      C(j, 0) = Polynomial(c);
    }
  }
  if (c_synth) *c_synth = C;

  SpectralDataset ds;
  ds.N = N;
  ds.fs = cfg.fs;
  ds.band_indices.resize(N);
  ds.omega.resize(N);
  ds.R = R;
  ds.W = Eigen::MatrixXcd::Zero(L, N);
  for (int k = 0; k < N; ++k) {
    ds.band_indices[k] = k;
    ds.omega(k) = 2.0 * M_PI * k * cfg.fs / N;
  }

  for (int k = 0; k <= N / 2; ++k) {
    const cplx om(0.0, ds.omega(k));
    const Eigen::MatrixXcd A = eval_at(model.A, om);
    Eigen::VectorXcd rhs = eval_at(model.B, om) * R.col(k) + eval_at(model.F, om) * E.col(k) +
                           eval_at(C, om).col(0);
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(A);
    const double rc = lu_rcond(lu);
    if (!(rc > 1e-12)) {
      // A purely capacitive/resistive network has no DC solution; the bin is
      // outside any usable band, so it is left at zero.
      if (k == 0) continue;
      throw SingularFrequency("A(j w) numerically singular at bin " + std::to_string(k));
    }
    Eigen::VectorXcd w = lu.solve(rhs);
    if (k == 0 || k == N / 2) w = w.real().cast<cplx>();
    ds.W.col(k) = w;
    if (k > 0 && k < N / 2) ds.W.col(N - k) = w.conjugate();
  }
  return ds;
}

SpectralDataset select_band(const SpectralDataset& full, double f_min, double f_max) {
  if (!(f_min >= 0.0 && f_min <= f_max) || f_max > full.fs / 2.0 * (1.0 + 1e-12))
    throw EmptyBand("band must lie within [0, fs/2]");
  SpectralDataset out;
  out.N = full.N;
  out.fs = full.fs;
  std::vector<int> cols;
  for (int i = 0; i < full.F(); ++i) {
    const double f = full.band_indices[i] * full.fs / full.N;
    if (f >= f_min * (1.0 - 1e-12) && f <= f_max * (1.0 + 1e-12) && full.band_indices[i] <= full.N / 2)
      cols.push_back(i);
  }
  if (cols.empty()) throw EmptyBand("no DFT bins inside the requested band");
  const int F = static_cast<int>(cols.size());
  out.band_indices.resize(F);
  out.omega.resize(F);
  out.R.resize(full.K(), F);
  out.W.resize(full.L(), F);
  for (int i = 0; i < F; ++i) {
    out.band_indices[i] = full.band_indices[cols[i]];
    out.omega(i) = full.omega(cols[i]);
    out.R.col(i) = full.R.col(cols[i]);
    out.W.col(i) = full.W.col(cols[i]);
  }
  return out;
}

void write_dataset_csv(const SpectralDataset& ds, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path);
  f << "k,f_hz";
  for (int x = 0; x < ds.K(); ++x) f << ",re_r" << x + 1 << ",im_r" << x + 1;
  for (int j = 0; j < ds.L(); ++j) f << ",re_w" << j + 1 << ",im_w" << j + 1;
  f << '\n' << std::setprecision(17);
  for (int i = 0; i < ds.F(); ++i) {
    f << ds.band_indices[i] << ',' << ds.band_indices[i] * ds.fs / ds.N;
    for (int x = 0; x < ds.K(); ++x) f << ',' << ds.R(x, i).real() << ',' << ds.R(x, i).imag();
    for (int j = 0; j < ds.L(); ++j) f << ',' << ds.W(j, i).real() << ',' << ds.W(j, i).imag();
    f << '\n';
  }
}

}  // namespace dcnid
