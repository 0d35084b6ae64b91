#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dcnid/subnet.hpp"

namespace dcnid {

enum class Mode { Full, Subnet };

/// Immersed-model orders; a negative n_a / n_b means "the exact orders of the
/// nominal network's Kron reduction".
struct ImmersedOrders {
  int n_a = -1;
  int n_b = -1;
  int n_c = 1;
};

struct RunConfig {
  RLCNetwork network;                 // truth used to synthesise data
  std::optional<RLCNetwork> nominal;  // design / expected values; defaults to network
  ExperimentConfig experiment;
  LpmSettings lpm;
  SkSettings sk;
  GnSettings gn;
  ComponentOptions components;
  int n_a = 2, n_b = 1, n_c = 1;
  ImmersedOrders immersed;
  Mode mode = Mode::Full;
  std::optional<Partition> partition;
  int mc_runs = 1;
  std::uint64_t master_seed = 1;
  int workers = 1;
  std::vector<int> sweep_N;  // empty: experiment.N only
  bool refine = true;        // run the SMLE step
  double fault_threshold_percent = 10.0;
  std::string output_dir = "out";

  const RLCNetwork& design() const { return nominal ? *nominal : network; }
  std::vector<int> lengths() const { return sweep_N.empty() ? std::vector<int>{experiment.N} : sweep_N; }
  /// Throws InvalidConfig (or the network / partition errors).
  void check() const;
};

/// JSON document -> RunConfig. Node numbers in the file are 1-based.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

/// ||c_hat - c_true||^2 / ||c_true||^2 over coefficient vectors (1/R, 1/L, C).
double rmse(const std::vector<double>& c_hat, const std::vector<double>& c_true);
/// 100 (v_hat - v_true) / v_true in percent.
double rpe(double v_hat, double v_true);

/// Structural checks of one identification, recorded per run.
struct Invariants {
  bool symmetric = true;       // estimated A equals its transpose exactly
  bool topology_zero = true;   // pinned-zero coefficients are exactly zero
  double constraint_violation = 0.0;  // max |Gamma theta - upsilon|, relative
  bool cost_monotone = true;   // SMLE accepted costs never increase
};

struct RunRecord {
  int run = 0;
  int N = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  bool converged = false;
  int sk_iterations = 0;
  int smle_iterations = 0;
  std::vector<ComponentEstimate> components;
  double rmse = 0.0;
  double seconds = 0.0;
  Invariants invariants;
};

struct Aggregate {
  int N = 0;
  int ok = 0, failed = 0, not_converged = 0;
  double rmse_median = 0.0, rmse_q1 = 0.0, rmse_q3 = 0.0, rmse_mean = 0.0;
  std::vector<double> mean_coefficient;    // per layout slot, over converged runs
  std::vector<double> median_coefficient;
};

struct RunResult {
  std::vector<ComponentSlot> layout;
  std::vector<ComponentEstimate> truth;    // per slot, from cfg.network
  std::vector<ComponentEstimate> nominal;  // per slot, from cfg.design()
  std::vector<RunRecord> runs;             // ordered by (N, run)
  std::vector<Aggregate> aggregates;       // one per N
  double seconds = 0.0;

  int failed() const;
};

/// One Monte-Carlo run; seed = master_seed ^ run_index.
RunRecord run_once(const RunConfig& cfg, int run_index, int N);

RunResult run_full(const RunConfig& cfg);
RunResult run_subnet(const RunConfig& cfg);
/// Dispatches on cfg.mode over every N in cfg.lengths() and every run, on
/// cfg.workers threads; results do not depend on the worker count.
RunResult run_experiment(const RunConfig& cfg);

enum class Verdict { Healthy, Drifted, Open };
const char* verdict_name(Verdict v);

struct FaultEntry {
  std::string name;
  double estimate = 0.0;
  double nominal = 0.0;
  double rpe = 0.0;
  Unit unit = Unit::Ohm;
  Verdict verdict = Verdict::Healthy;
};

/// Open when the estimate is flagged open; drifted when |RPE| against the
/// nominal value exceeds the threshold (an open nominal is drifted whenever
/// the estimate is not open).
std::vector<FaultEntry> fault_report(const std::vector<ComponentEstimate>& estimates,
                                     const std::vector<ComponentEstimate>& nominal, double rpe_threshold_percent = 10.0);

/// Component estimates built from the mean coefficients over converged runs
/// of one aggregate.
std::vector<ComponentEstimate> mean_components(const RunResult& res, const Aggregate& agg,
                                               const ComponentOptions& opt = {});

/// Median, quartiles and 1.5 IQR whiskers per group, as a standalone SVG.
std::string boxplot_svg(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& groups,
                        const std::string& title, const std::string& y_label, bool log_y = false);

/// estimates.csv, rmse.csv, summary.json and boxplot SVGs under dir.
void export_results(const RunResult& res, const RunConfig& cfg, const std::string& dir);
void export_fault_report(const std::vector<FaultEntry>& report, const std::string& path);

}  // namespace dcnid
