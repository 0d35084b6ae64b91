// Acceptance checks: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>

#include "dcnid/errors.hpp"
#include "dcnid/experiment.hpp"

using namespace dcnid;

namespace {

// Tolerances and wall-clock budgets, fixed here on purpose.
constexpr double kNoiselessTol = 1e-4;    // 1: relative coefficient error
constexpr double kNoiselessBudget = 30;   // s
constexpr int kKktInstances = 50;         // 2
constexpr double kKktTol = 1e-8;
constexpr double kKktBudget = 5;
constexpr double kSchurTol = 1e-10;       // 3
constexpr double kKronTol = 1e-9;
constexpr double kConsistencyBudget = 15 * 60;  // 4
constexpr double kDefectTol = 5.0;              // 5 and 6: percent
constexpr double kDefectBudget = 10 * 60;
constexpr double kOpenR20 = 1e5;                // 6: ohms
constexpr int kLpmRuns = 200;                   // 7
constexpr double kLpmTol = 0.20;
constexpr double kConstraintTol = 1e-10;        // 8

std::string cfg_path(const char* name) { return std::string(DCNID_CONFIG_DIR) + "/" + name; }

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool ok, const std::string& what) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

// Runs fn, turning exceptions into a failed criterion.
void guarded(int id, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report(id, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---- invariant bookkeeping for criterion 8 ----

struct InvariantTally {
  int runs = 0, bad = 0;
  double worst_violation = 0.0;
  std::string first_bad;

  void add(const std::string& tag, const RunResult& res) {
    for (const RunRecord& r : res.runs) {
      if (!r.ok) continue;
      ++runs;
      const Invariants& v = r.invariants;
      worst_violation = std::max(worst_violation, v.constraint_violation);
      if (!v.symmetric || !v.topology_zero || !v.cost_monotone || !(v.constraint_violation <= kConstraintTol)) {
        ++bad;
        if (first_bad.empty()) first_bad = tag + " run " + std::to_string(r.run) + " N=" + std::to_string(r.N);
      }
    }
  }
} tally;

std::map<std::string, ComponentEstimate> by_name(const std::vector<ComponentEstimate>& v) {
  std::map<std::string, ComponentEstimate> m;
  for (const auto& c : v) m[c.name] = c;
  return m;
}

int failed_runs(const RunResult& res) {
  return static_cast<int>(std::count_if(res.runs.begin(), res.runs.end(), [](const RunRecord& r) { return !r.ok; }));
}

// ---- 1 ----

void noiseless_full() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = load_config(cfg_path("full7_noiseless.json"));
  cfg.experiment.N = 8192;
  cfg.experiment.sigma_e2 = 0.0;
  cfg.mc_runs = 1;
  const RunResult res = run_experiment(cfg);
  const double t = since(t0);
  const RunRecord& r = res.runs.at(0);
  if (!r.ok) return report(1, false, "run failed: " + r.error);
  double worst = 0.0;
  for (size_t s = 0; s < res.layout.size(); ++s) {
    const double c = res.truth[s].coefficient;
    worst = std::max(worst, std::abs(r.components[s].coefficient - c) / std::abs(c));
  }
  report(1, worst <= kNoiselessTol && t < kNoiselessBudget,
         fmt("7-node noiseless, max relative error %.2e (tol %.0e), %.1f s (budget %.0f s)", worst, kNoiselessTol, t,
             kNoiselessBudget));
}

// ---- 2 ----

Eigen::VectorXd nullspace_oracle(const Eigen::MatrixXd& H, const Eigen::MatrixXd& G, const Eigen::VectorXd& u) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(G, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd tp = svd.solve(u);
  const Eigen::MatrixXd N = svd.matrixV().rightCols(G.cols() - G.rows());
  const Eigen::VectorXd z = (N.transpose() * H * N).ldlt().solve(-N.transpose() * H * tp);
  return tp + N * z;
}

void kkt_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Philox rng(20240601, 0);
  double worst = 0.0;
  for (int t = 0; t < kKktInstances; ++t) {
    const int P = 6 + static_cast<int>(rng.next_u32() % 40);
    const int m = 1 + static_cast<int>(rng.next_u32() % (P / 2));
    const int rows = P + 5 + static_cast<int>(rng.next_u32() % 30);
    Eigen::MatrixXd X(rows, P);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < P; ++j) X(i, j) = rng.normal();
    ConstraintSet cs;
    cs.Gamma.resize(m, P);
    cs.upsilon.resize(m);
    for (int i = 0; i < m; ++i) {
      cs.upsilon(i) = rng.normal();
      for (int j = 0; j < P; ++j) cs.Gamma(i, j) = rng.normal();
    }
    const Eigen::MatrixXd H = X.transpose() * X;
    const Eigen::VectorXd ref = nullspace_oracle(H, cs.Gamma, cs.upsilon);
    const Eigen::VectorXd th = kkt_solve(H, cs).theta;
    worst = std::max(worst, (th - ref).norm() / ref.norm());
  }
  const double t = since(t0);
  report(2, worst <= kKktTol && t < kKktBudget,
         fmt("%.0f random KKT systems vs null-space oracle, max relative gap %.2e (tol %.0e), %.2f s", kKktInstances,
             worst, kKktTol, t));
}

// ---- 3 ----

std::vector<double> conv(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) return {};
  std::vector<double> c(a.size() + b.size() - 1, 0.0);
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
  return c;
}

double gap(const std::vector<double>& p, const std::vector<double>& q) {
  double top = 0.0, g = 0.0;
  for (double v : q) top = std::max(top, std::abs(v));
  for (size_t l = 0; l < std::max(p.size(), q.size()); ++l) {
    const double a = l < p.size() ? p[l] : 0.0, b = l < q.size() ? q[l] : 0.0;
    g = std::max(g, std::abs(a - b));
  }
  return top > 0.0 ? g / top : g;
}

std::vector<double> scaled(const Polynomial& p, double s) { return (s * p).coeffs(); }

void kron_oracles() {
  // 3-node chain, middle node eliminated
  RLCNetwork n;
  n.nodes = 3;
  n.grounded = {GroundedElements{1e-6, 400.0, 0.02}, GroundedElements{2e-6, 250.0, 0.03},
                GroundedElements{1.5e-6, 300.0, 0.04}};
  RLCEdge e1, e2;
  e1.j = 0, e1.k = 1, e1.R = 100.0, e1.L = 0.01;
  e2.j = 1, e2.k = 2, e2.R = 250.0, e2.C = 0.5e-6;
  n.edges = {e1, e2};
  n.excitation_nodes = {0};
  const DCNModel m3 = rlc_to_dcn(n);
  const ImmersedModel r3 = kron_reduce(m3, Partition{{0, 2}, {}, {1}});
  const auto& a22 = m3.A(1, 1).coeffs();
  const double s = a22.back() / r3.d_II.leading();
  double g3 = gap(scaled(r3.d_II, s), a22);
  const int M[2] = {0, 2};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      std::vector<double> want = conv(a22, m3.A(M[i], M[j]).coeffs());
      const std::vector<double> corr = conv(m3.A(M[i], 1).coeffs(), m3.A(1, M[j]).coeffs());
      want.resize(std::max(want.size(), corr.size()), 0.0);
      for (size_t l = 0; l < corr.size(); ++l) want[l] -= corr[l];
      g3 = std::max(g3, gap(scaled(r3.A_im(i, j), s), want));
    }

  // 7-node, J = {1,2}, D = {3,5}, I = {4,6,7}
  const RunConfig cfg = load_config(cfg_path("subnet7_consistency.json"));
  const DCNModel m7 = rlc_to_dcn(cfg.network);
  const Partition& part = *cfg.partition;
  const ImmersedModel r7 = kron_reduce(m7, part);
  double g7 = 0.0;
  for (size_t i = 0; i < part.J.size(); ++i)
    for (size_t j = 0; j < part.J.size(); ++j)
      g7 = std::max(g7, gap(r7.A_im(i, j).coeffs(), (r7.d_II * m7.A(part.J[i], part.J[j])).coeffs()));
  report(3, g3 <= kSchurTol && g7 <= kKronTol,
         fmt("3-node Schur gap %.2e (tol %.0e); 7-node A_JJ vs d*A_JJ gap %.2e (tol %.0e)", g3, kSchurTol, g7,
             kKronTol));
}

// ---- 4 ----

void consistency() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = load_config(cfg_path("full10_consistency.json"));
  cfg.sweep_N = {1000, 4000, 16000, 64000};
  cfg.mc_runs = 20;
  cfg.experiment.sigma_e2 = 1.0;
  std::fprintf(stderr, "[acceptance] criterion 4: 10-node sweep, 4 x 20 runs\n");
  const RunResult res = run_experiment(cfg);
  const double t = since(t0);
  tally.add("consistency", res);
  bool dec = true;
  std::string med;
  for (size_t i = 0; i < res.aggregates.size(); ++i) {
    const Aggregate& a = res.aggregates[i];
    med += fmt(" N=%.0f:%.3e", a.N, a.rmse_median);
    if (a.ok == 0 || (i > 0 && !(a.rmse_median < res.aggregates[i - 1].rmse_median))) dec = false;
  }
  const int bad = failed_runs(res);
  report(4, dec && bad == 0 && t < kConsistencyBudget,
         "median RMSE" + med + (dec ? " strictly decreasing" : " NOT strictly decreasing") +
             fmt(", %.0f failed runs, %.0f s (budget %.0f s)", bad, t, kConsistencyBudget));
}

// ---- 5 ----

void full_defect() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = load_config(cfg_path("full10_defect.json"));
  cfg.experiment.N = 20000;
  cfg.experiment.sigma_e2 = 100.0;
  cfg.mc_runs = 10;
  cfg.sweep_N.clear();
  std::fprintf(stderr, "[acceptance] criterion 5: 10-node defect, 10 runs\n");
  const RunResult res = run_experiment(cfg);
  const double t = since(t0);
  tally.add("full defect", res);
  const std::vector<ComponentEstimate> mean = mean_components(res, res.aggregates.at(0), cfg.components);
  double worst = 0.0;
  std::string worst_name, spurious;
  for (size_t s = 0; s < res.layout.size(); ++s) {
    if (!std::isfinite(res.truth[s].value) || res.truth[s].coefficient == 0.0) continue;
    if (mean[s].open) {
      spurious += " " + mean[s].name;
      continue;
    }
    const double e = std::abs(rpe(mean[s].value, res.truth[s].value));
    if (e > worst) {
      worst = e;
      worst_name = mean[s].name;
    }
  }
  const auto report_v = fault_report(mean, res.nominal, cfg.fault_threshold_percent);
  bool r45 = false, l56 = false;
  for (const auto& f : report_v) {
    if (f.name == "R_45") r45 = f.verdict == Verdict::Open;
    if (f.name == "L_56") l56 = f.verdict == Verdict::Open;
  }
  const int bad = failed_runs(res);
  report(5, worst <= kDefectTol && spurious.empty() && r45 && l56 && bad == 0 && t < kDefectBudget,
         fmt("10-node defect, worst |RPE| of finite means %.3f%% (tol %.0f%%) at ", worst, kDefectTol) + worst_name +
             (spurious.empty() ? "" : ", healthy but flagged open:" + spurious) +
             (r45 ? ", R_45 open" : ", R_45 NOT open") + (l56 ? ", L_56 open" : ", L_56 NOT open") +
             fmt(", %.0f failed runs, %.0f s (budget %.0f s)", bad, t, kDefectBudget));
}

// ---- 6 ----

void subnet_defect() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = load_config(cfg_path("subnet7_defect.json"));
  cfg.experiment.N = 40000;
  cfg.mc_runs = 10;
  cfg.sweep_N.clear();
  std::fprintf(stderr, "[acceptance] criterion 6: 7-node subnet defect, 10 runs\n");
  const RunResult res = run_experiment(cfg);
  const double t = since(t0);
  tally.add("subnet defect", res);
  const auto mean = by_name(mean_components(res, res.aggregates.at(0), cfg.components));
  auto val = [&](const char* name) { return mean.count(name) ? mean.at(name).value : std::nan(""); };
  const double l12 = val("L_12"), r10 = val("R_10"), l20 = val("L_20"), r20 = val("R_20");
  const double e1 = std::abs(rpe(l12, 0.010)), e2 = std::abs(rpe(r10, 200.0)), e3 = std::abs(rpe(l20, 0.018));
  const bool ok = e1 <= kDefectTol && e2 <= kDefectTol && e3 <= kDefectTol && r20 >= kOpenR20;
  const int bad = failed_runs(res);
  report(6, ok && bad == 0 && t < kDefectBudget,
         fmt("subnet defect, L_12 %.4g H (%.3f%%), R_10 %.5g ohm (%.3f%%)", l12, rpe(l12, 0.010), r10,
             rpe(r10, 200.0)) +
             fmt(", L_20 %.4g H (%.3f%%), R_20 %.3g ohm (>= %.0e)", l20, rpe(l20, 0.018), r20, kOpenR20) +
             fmt(", %.0f failed runs, %.0f s (budget %.0f s)", bad, t, kDefectBudget));
}

// ---- 7 ----

void lpm_covariance() {
  RLCNetwork n;
  n.nodes = 2;
  n.grounded = {GroundedElements{1e-6, 300.0, 0.02}, GroundedElements{2e-6, 500.0, 0.03}};
  RLCEdge e;
  e.j = 0, e.k = 1, e.R = 120.0, e.L = 0.015;
  n.edges = {e};
  n.excitation_nodes = {0};
  const DCNModel m = rlc_to_dcn(n);
  ExperimentConfig cfg;
  cfg.N = 4000;
  cfg.fs = 20000.0;
  cfg.f_min = 300.0;
  cfg.f_max = 4000.0;
  cfg.sigma_e2 = 1.0;
  cfg.seed = 77;
  const Excitation ex = generate_excitation(cfg, 1);

  SpectralDataset first;
  Eigen::MatrixXd emp, pred;
  for (int run = 0; run < kLpmRuns; ++run) {
    ExperimentConfig c = cfg;
    c.seed = cfg.seed + 1 + run;
    const SpectralDataset noisy = select_band(synth_frequency_data(m, c, ex.R), c.f_min, c.f_max);
    c.sigma_e2 = 0.0;
    const SpectralDataset clean = select_band(synth_frequency_data(m, c, ex.R), c.f_min, c.f_max);
    const NonparamEstimate np = run_lpm(noisy, LpmSettings{});
    if (run == 0) {
      emp = pred = Eigen::MatrixXd::Zero(2, np.F());
    }
    for (int k = 0; k < np.F(); ++k)
      for (int ch = 0; ch < 2; ++ch) {
        emp(ch, k) += std::norm(np.W(ch, k) - clean.W(ch, k));
        pred(ch, k) += np.rho[k] * np.Cv[k](ch, ch).real();
      }
  }
  double worst = 0.0;
  std::string detail;
  for (int ch = 0; ch < 2; ++ch) {
    const double ratio = emp.row(ch).sum() / pred.row(ch).sum();
    worst = std::max(worst, std::abs(ratio - 1.0));
    detail += fmt(" node %.0f: %.3f", ch + 1, ratio);
  }
  report(7, worst <= kLpmTol,
         "2-node LPM, empirical var / predicted rho*Cv over " + std::to_string(kLpmRuns) + " runs," + detail +
             fmt(" (tol %.0f%%)", 100 * kLpmTol));
}

// ---- 8 ----

void invariants() {
  report(8, tally.runs > 0 && tally.bad == 0,
         fmt("invariants on %.0f runs of criteria 4-6, %.0f violations, worst constraint residual %.2e (tol %.0e)",
             tally.runs, tally.bad, tally.worst_violation, kConstraintTol) +
             (tally.first_bad.empty() ? "" : ", first: " + tally.first_bad));
}

}  // namespace

int main() {
  guarded(1, noiseless_full);
  guarded(2, kkt_oracle);
  guarded(3, kron_oracles);
  guarded(4, consistency);
  guarded(5, full_defect);
  guarded(6, subnet_defect);
  guarded(7, lpm_covariance);
  guarded(8, invariants);
  std::printf("%s: %d criterion(s) failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
