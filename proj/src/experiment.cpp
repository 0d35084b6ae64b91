#include "dcnid/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dcnid/errors.hpp"

namespace dcnid {

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

// ---- config -----------------------------------------------------------------

// Absent key keeps `dst`; null clears it (component not fitted).
void read_optional(const json& j, const char* key, std::optional<double>& dst) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (v.is_null())
    dst.reset();
  else
    dst = v.get<double>();
}

int node_index(const json& v, int nodes) {
  const int n = v.get<int>();
  if (n < 1 || n > nodes) throw InvalidConfig("node " + std::to_string(n) + " out of range");
  return n - 1;
}

RLCNetwork parse_network(const json& j) {
  RLCNetwork net;
  net.nodes = j.at("nodes").get<int>();
  if (net.nodes < 1) throw InvalidConfig("network.nodes must be >= 1");
  GroundedElements def;
  if (j.contains("grounded_default")) {
    const json& g = j.at("grounded_default");
    read_optional(g, "C", def.C);
    read_optional(g, "R", def.R);
    read_optional(g, "L", def.L);
  }
  net.grounded.assign(net.nodes, def);
  if (j.contains("grounded"))
    for (const json& g : j.at("grounded")) {
      GroundedElements& e = net.grounded[node_index(g.at("node"), net.nodes)];
      read_optional(g, "C", e.C);
      read_optional(g, "R", e.R);
      read_optional(g, "L", e.L);
    }
  for (const json& e : j.at("edges")) {
    const json& between = e.at("between");
    if (!between.is_array() || between.size() != 2) throw InvalidConfig("edge.between must list two nodes");
    int a = node_index(between[0], net.nodes), b = node_index(between[1], net.nodes);
    if (a == b) throw InvalidConfig("self edge");
    if (a > b) std::swap(a, b);
    RLCEdge edge;
    edge.j = a;
    edge.k = b;
    read_optional(e, "C", edge.C);
    read_optional(e, "R", edge.R);
    read_optional(e, "L", edge.L);
    net.edges.push_back(edge);
  }
  std::sort(net.edges.begin(), net.edges.end(),
            [](const RLCEdge& x, const RLCEdge& y) { return std::pair(x.j, x.k) < std::pair(y.j, y.k); });
  for (const json& x : j.at("excitation")) net.excitation_nodes.push_back(node_index(x, net.nodes));
  return net;
}

int order_or_auto(const json& j, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (v.is_string()) {
    if (v.get<std::string>() != "auto") throw InvalidConfig(std::string(key) + " must be an integer or \"auto\"");
    return -1;
  }
  return v.get<int>();
}

// ---- statistics -------------------------------------------------------------

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median_abs_nonzero(const std::vector<double>& v) {
  std::vector<double> a;
  for (double x : v)
    if (x != 0.0) a.push_back(std::abs(x));
  return a.empty() ? 0.0 : quantile(a, 0.5);
}

std::vector<ComponentEstimate> from_coefficients(const std::vector<ComponentSlot>& layout,
                                                 const std::vector<double>& coef, const ComponentOptions& opt) {
  std::vector<double> groups[2][3];
  for (size_t s = 0; s < layout.size(); ++s) groups[layout[s].grounded()][layout[s].order].push_back(coef[s]);
  std::vector<ComponentEstimate> out;
  for (size_t s = 0; s < layout.size(); ++s) {
    const double th = opt.open_relative * median_abs_nonzero(groups[layout[s].grounded()][layout[s].order]);
    out.push_back(make_component(layout[s], static_cast<int>(s) + 1, coef[s], th, std::abs(coef[s]), opt));
  }
  return out;
}

std::vector<ComponentEstimate> network_components(const RLCNetwork& net, const std::vector<ComponentSlot>& layout) {
  std::vector<ComponentEstimate> out;
  for (size_t s = 0; s < layout.size(); ++s)
    out.push_back(make_component(layout[s], static_cast<int>(s) + 1, slot_coefficient(net, layout[s]), 0.0, 0.0, {}));
  return out;
}

// RPE of one component. An open truth is measured in coefficient space
// against the healthy (nominal) coefficient.
double component_rpe(const ComponentEstimate& est, const ComponentEstimate& truth, const ComponentEstimate& nominal) {
  if (truth.coefficient == 0.0) {
    const double ref = nominal.coefficient != 0.0 ? nominal.coefficient : 1.0;
    return 100.0 * est.coefficient / ref;
  }
  return rpe(est.value, truth.value);
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ---- one identification ------------------------------------------------------

Invariants full_invariants(const DCNModel& est, const ConstraintSet& cs,
                           const Eigen::VectorXd& theta, const std::vector<int>& zeros, const SmleResult* sm) {
  Invariants inv;
  for (int i = 0; i < est.L(); ++i)
    for (int j = i + 1; j < est.L(); ++j)
      if (est.A(i, j).coeffs() != est.A(j, i).coeffs()) inv.symmetric = false;
  for (int idx : zeros)
    if (theta(idx) != 0.0) inv.topology_zero = false;
  const double scale = std::max(1.0, cs.upsilon.cwiseAbs().maxCoeff());
  inv.constraint_violation = cs.violation(theta) / scale;
  if (sm)
    for (size_t k = 1; k < sm->accepted_costs.size(); ++k)
      if (sm->accepted_costs[k] > sm->accepted_costs[k - 1]) inv.cost_monotone = false;
  return inv;
}

std::vector<int> pinned_zeros(const ConstraintSet& cs) {
  std::vector<int> out;
  for (int r = 0; r < cs.rows(); ++r) {
    int nz = 0, at = -1;
    for (Eigen::Index c = 0; c < cs.Gamma.cols(); ++c)
      if (cs.Gamma(r, c) != 0.0) {
        ++nz;
        at = static_cast<int>(c);
      }
    if (nz == 1 && cs.upsilon(r) == 0.0) out.push_back(at);
  }
  return out;
}

std::vector<ComponentSlot> slots_for(const RunConfig& cfg) {
  return cfg.mode == Mode::Full ? component_layout(cfg.design())
                                : subnet_component_layout(cfg.design(), *cfg.partition);
}

void identify_full(const RunConfig& cfg, const SpectralDataset& ds, const std::vector<ComponentSlot>& layout,
                   RunRecord& rec) {
  const DCNModel design = rlc_to_dcn(cfg.design(), cfg.n_c);
  const ParamLayout lay(cfg.network.nodes, design.K(), cfg.n_a, cfg.n_b, cfg.n_c);
  const auto zeros = design_zero_a(lay, design.topology, design_orders(cfg.design()));
  const ConstraintSet cs = build_constraints(lay, design.B, zeros);
  const NonparamEstimate np = run_lpm(ds, cfg.lpm);
  const SkResult sk = sk_identify(ds, np, lay, cs, cfg.sk);
  rec.sk_iterations = static_cast<int>(sk.history.size());
  Eigen::VectorXd theta = sk.theta;
  SmleResult sm;
  if (cfg.refine) {
    sm = smle_refine(sk.theta, cs.free_mask(), ds, np, lay, cfg.gn);
    rec.smle_iterations = static_cast<int>(sm.history.size());
    theta = sm.theta;
  }
  rec.converged = cfg.refine ? sm.converged : sk.converged;
  DCNModel est = lay.unpack(theta);
  est.topology = design.topology;
  rec.components = dcn_to_components(est, layout, cfg.components);
  rec.invariants = full_invariants(est, cs, theta, pinned_zeros(cs), cfg.refine ? &sm : nullptr);
}

void identify_sub(const RunConfig& cfg, const SpectralDataset& ds, const std::vector<ComponentSlot>& layout,
                  RunRecord& rec) {
  const Partition& part = *cfg.partition;
  const DCNModel design = rlc_to_dcn(cfg.design(), cfg.n_c);
  int na = cfg.immersed.n_a, nb = cfg.immersed.n_b;
  if (na < 0 || nb < 0) {
    const auto exact = immersed_orders(design, part);
    if (na < 0) na = exact.first;
    if (nb < 0) nb = exact.second;
  }
  const SpectralDataset dm = ds.restrict_nodes(part.M());
  const ParamLayout lay(static_cast<int>(part.M().size()), design.K(), na, nb, cfg.immersed.n_c);
  const ConstraintSet cs = immersed_constraints(lay, part, design);
  // The immersed polynomials reach high orders; the QR paths avoid squaring
  // the condition number of the monomial regressor.
  SkSettings sk = cfg.sk;
  GnSettings gn = cfg.gn;
  sk.use_qr = gn.use_qr = true;
  // The likelihood step runs in the factored parameterisation (rows J are
  // d(p) times the subnetwork rows); the unstructured one drifts along flat
  // directions of the immersed model and ruins the recovery.
  const ImmersedFit fit = identify_immersed(dm, lay, cs, cfg.lpm, sk, gn, false);
  rec.sk_iterations = static_cast<int>(fit.sk.history.size());
  rec.converged = fit.sk.converged;
  Eigen::VectorXd eta_hat = fit.eta;
  SmleResult sm;
  if (cfg.refine) {
    const StructuredFit sf = structured_refine(fit.eta, dm, fit.np, lay, cs, part, cfg.design(), gn);
    eta_hat = sf.eta;
    sm.accepted_costs = sf.accepted_costs;
    rec.smle_iterations = sf.iterations;
    rec.converged = sf.converged;
  }

  const DCNModel eta = lay.unpack(eta_hat);
  const SubnetLayout sl{static_cast<int>(part.J.size()), static_cast<int>(part.D.size()), design.K(), cfg.n_a,
                        cfg.n_b};
  const ConstraintSet cs1 = subnet_constraints(sl, part, cfg.design(), design.B);
  const SubnetEstimate est = recover_subnet(eta, dm.omega, sl, cs1);
  rec.components = subnet_components(est, part, layout, cfg.components);

  Invariants inv = full_invariants(eta, cs, eta_hat, pinned_zeros(cs), cfg.refine ? &sm : nullptr);
  const double scale1 = std::max(1.0, cs1.upsilon.cwiseAbs().maxCoeff());
  inv.constraint_violation = std::max(inv.constraint_violation, cs1.violation(est.theta1) / scale1);
  for (int idx : pinned_zeros(cs1))
    if (est.theta1(idx) != 0.0) inv.topology_zero = false;
  rec.invariants = inv;
}

}  // namespace

// ---- config -------------------------------------------------------------------

void RunConfig::check() const {
  network.check();
  if (nominal) {
    nominal->check();
    if (nominal->nodes != network.nodes) throw InvalidConfig("nominal network has a different node count");
    if (nominal->excitation_nodes != network.excitation_nodes)
      throw InvalidConfig("nominal network has different excitation nodes");
  }
  experiment.check();
  for (int n : sweep_N)
    if (n < 8) throw InvalidConfig("sweep_N entries must be >= 8");
  if (mc_runs < 1) throw InvalidConfig("mc_runs must be >= 1");
  if (workers < 1) throw InvalidConfig("workers must be >= 1");
  if (n_a < 0 || n_b < 0 || n_c < 0) throw InvalidConfig("orders must be non-negative");
  if (lpm.tau < 0) throw InvalidConfig("lpm.tau must be >= 0");
  if (mode == Mode::Subnet) {
    if (!partition) throw InvalidConfig("mode subnet requires a partition");
    partition->check(design().topology());
    if (n_a != 2) throw InvalidConfig("subnet recovery assumes an RLC model (n_a = 2)");
  } else if (n_a != 2) {
    throw InvalidConfig("component extraction assumes an RLC model (n_a = 2)");
  }
}

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  try {
    cfg.network = parse_network(j.at("network"));
    if (j.contains("nominal")) cfg.nominal = parse_network(j.at("nominal"));
    if (j.contains("experiment")) {
      const json& e = j.at("experiment");
      ExperimentConfig& x = cfg.experiment;
      x.N = e.value("N", x.N);
      x.fs = e.value("fs", x.fs);
      x.sigma_r2 = e.value("sigma_r2", x.sigma_r2);
      x.sigma_e2 = e.value("sigma_e2", x.sigma_e2);
      x.f_min = e.value("f_min", x.f_min);
      x.f_max = e.value("f_max", x.f_max);
      x.transient_scale = e.value("transient_scale", x.transient_scale);
    }
    if (j.contains("lpm")) {
      cfg.lpm.tau = j.at("lpm").value("tau", cfg.lpm.tau);
      cfg.lpm.n = j.at("lpm").value("n", cfg.lpm.n);
    }
    if (j.contains("orders")) {
      const json& o = j.at("orders");
      cfg.n_a = o.value("n_a", cfg.n_a);
      cfg.n_b = o.value("n_b", cfg.n_b);
      cfg.n_c = o.value("n_c", cfg.n_c);
    }
    if (j.contains("immersed_orders")) {
      const json& o = j.at("immersed_orders");
      cfg.immersed.n_a = order_or_auto(o, "n_a", cfg.immersed.n_a);
      cfg.immersed.n_b = order_or_auto(o, "n_b", cfg.immersed.n_b);
      cfg.immersed.n_c = o.value("n_c", cfg.immersed.n_c);
    }
    if (j.contains("sk")) {
      const json& s = j.at("sk");
      cfg.sk.max_iter = s.value("max_iter", cfg.sk.max_iter);
      cfg.sk.rel_tol = s.value("rel_tol", cfg.sk.rel_tol);
      cfg.sk.epsilon_w = s.value("epsilon_w", cfg.sk.epsilon_w);
      cfg.sk.use_qr = s.value("use_qr", cfg.sk.use_qr);
    }
    if (j.contains("smle")) {
      const json& s = j.at("smle");
      cfg.gn.max_iter = s.value("max_iter", cfg.gn.max_iter);
      cfg.gn.rel_cost_tol = s.value("rel_cost_tol", cfg.gn.rel_cost_tol);
      cfg.gn.use_qr = s.value("use_qr", cfg.gn.use_qr);
      cfg.gn.epsilon_w = cfg.sk.epsilon_w;
    }
    if (j.contains("components")) {
      const json& c = j.at("components");
      cfg.components.open_relative = c.value("open_relative", cfg.components.open_relative);
      cfg.components.negative_clamp = c.value("negative_clamp", cfg.components.negative_clamp);
    }
    const std::string mode = j.value("mode", std::string("full"));
    if (mode == "full")
      cfg.mode = Mode::Full;
    else if (mode == "subnet")
      cfg.mode = Mode::Subnet;
    else
      throw InvalidConfig("mode must be \"full\" or \"subnet\"");
    if (j.contains("partition")) {
      const json& p = j.at("partition");
      Partition part;
      std::vector<bool> seen(cfg.network.nodes, false);
      for (const json& v : p.at("J")) part.J.push_back(node_index(v, cfg.network.nodes));
      for (const json& v : p.at("D")) part.D.push_back(node_index(v, cfg.network.nodes));
      for (int v : part.J) seen[v] = true;
      for (int v : part.D) seen[v] = true;
      for (int v = 0; v < cfg.network.nodes; ++v)
        if (!seen[v]) part.I.push_back(v);
      std::sort(part.J.begin(), part.J.end());
      std::sort(part.D.begin(), part.D.end());
      cfg.partition = part;
    }
    cfg.mc_runs = j.value("mc_runs", cfg.mc_runs);
    cfg.master_seed = j.value("master_seed", cfg.master_seed);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.sweep_N = j.value("sweep_N", cfg.sweep_N);
    cfg.refine = j.value("refine", cfg.refine);
    cfg.fault_threshold_percent = j.value("fault_threshold_percent", cfg.fault_threshold_percent);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("config field error: ") + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---- metrics --------------------------------------------------------------------

double rmse(const std::vector<double>& c_hat, const std::vector<double>& c_true) {
  if (c_hat.size() != c_true.size()) throw DimensionMismatch("rmse vectors differ in length");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < c_hat.size(); ++i) {
    num += (c_hat[i] - c_true[i]) * (c_hat[i] - c_true[i]);
    den += c_true[i] * c_true[i];
  }
  if (den == 0.0) throw InvalidConfig("rmse: true coefficient vector is zero");
  return num / den;
}

double rpe(double v_hat, double v_true) {
  if (v_hat == v_true) return 0.0;
  return 100.0 * (v_hat - v_true) / v_true;
}

int RunResult::failed() const {
  return static_cast<int>(std::count_if(runs.begin(), runs.end(), [](const RunRecord& r) { return !r.ok; }));
}

RunRecord run_once(const RunConfig& cfg, int run_index, int N) {
  RunRecord rec;
  rec.run = run_index;
  rec.N = N;
  rec.seed = cfg.master_seed ^ static_cast<std::uint64_t>(run_index);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    ExperimentConfig ec = cfg.experiment;
    ec.N = N;
    ec.seed = rec.seed;
    const DCNModel truth = rlc_to_dcn(cfg.network, cfg.n_c);
    const Excitation ex = generate_excitation(ec, truth.K());
    const SpectralDataset ds = select_band(synth_frequency_data(truth, ec, ex.R), ec.f_min, ec.f_max);
    const auto layout = slots_for(cfg);
    if (cfg.mode == Mode::Full)
      identify_full(cfg, ds, layout, rec);
    else
      identify_sub(cfg, ds, layout, rec);
    std::vector<double> c_hat, c_true;
    for (size_t s = 0; s < layout.size(); ++s) {
      c_hat.push_back(rec.components[s].coefficient);
      c_true.push_back(slot_coefficient(cfg.network, layout[s]));
    }
    rec.rmse = rmse(c_hat, c_true);
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

RunResult run_experiment(const RunConfig& cfg) {
  cfg.check();
  const auto t0 = std::chrono::steady_clock::now();
  RunResult res;
  res.layout = slots_for(cfg);
  res.truth = network_components(cfg.network, res.layout);
  res.nominal = network_components(cfg.design(), res.layout);

  const std::vector<int> lengths = cfg.lengths();
  std::vector<std::pair<int, int>> jobs;
  for (int N : lengths)
    for (int r = 0; r < cfg.mc_runs; ++r) jobs.emplace_back(N, r);
  res.runs.resize(jobs.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (size_t i = next++; i < jobs.size(); i = next++) res.runs[i] = run_once(cfg, jobs[i].second, jobs[i].first);
  };
  const int nthreads = std::max(1, std::min<int>(cfg.workers, static_cast<int>(jobs.size())));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (int N : lengths) {
    Aggregate agg;
    agg.N = N;
    std::vector<double> rm;
    std::vector<std::vector<double>> coef(res.layout.size());
    for (const RunRecord& r : res.runs) {
      if (r.N != N) continue;
      if (!r.ok) {
        ++agg.failed;
        continue;
      }
      ++agg.ok;
      if (!r.converged) {
        ++agg.not_converged;
        continue;
      }
      rm.push_back(r.rmse);
      for (size_t s = 0; s < res.layout.size(); ++s) coef[s].push_back(r.components[s].coefficient);
    }
    agg.rmse_median = quantile(rm, 0.5);
    agg.rmse_q1 = quantile(rm, 0.25);
    agg.rmse_q3 = quantile(rm, 0.75);
    agg.rmse_mean = rm.empty() ? std::numeric_limits<double>::quiet_NaN()
                               : std::accumulate(rm.begin(), rm.end(), 0.0) / static_cast<double>(rm.size());
    for (auto& c : coef) {
      agg.mean_coefficient.push_back(c.empty() ? std::numeric_limits<double>::quiet_NaN()
                                               : std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size()));
      agg.median_coefficient.push_back(quantile(c, 0.5));
    }
    res.aggregates.push_back(std::move(agg));
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

RunResult run_full(const RunConfig& cfg) {
  if (cfg.mode != Mode::Full) throw InvalidConfig("run_full needs mode full");
  return run_experiment(cfg);
}

RunResult run_subnet(const RunConfig& cfg) {
  if (cfg.mode != Mode::Subnet) throw InvalidConfig("run_subnet needs mode subnet");
  return run_experiment(cfg);
}

// ---- fault report -----------------------------------------------------------------

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Healthy: return "healthy";
    case Verdict::Drifted: return "drifted";
    case Verdict::Open: return "open";
  }
  return "?";
}

std::vector<FaultEntry> fault_report(const std::vector<ComponentEstimate>& estimates,
                                     const std::vector<ComponentEstimate>& nominal, double rpe_threshold_percent) {
  if (estimates.size() != nominal.size()) throw DimensionMismatch("estimates and nominal differ in length");
  std::vector<FaultEntry> out;
  for (size_t i = 0; i < estimates.size(); ++i) {
    const ComponentEstimate& e = estimates[i];
    const ComponentEstimate& n = nominal[i];
    FaultEntry f;
    f.name = e.name;
    f.estimate = e.value;
    f.nominal = n.value;
    f.unit = e.unit;
    const bool nominal_open = n.coefficient == 0.0;
    f.rpe = nominal_open ? std::numeric_limits<double>::quiet_NaN() : (e.open ? -100.0 : rpe(e.value, n.value));
    if (e.open)
      f.verdict = nominal_open ? Verdict::Healthy : Verdict::Open;
    else if (nominal_open || std::abs(f.rpe) > rpe_threshold_percent)
      f.verdict = Verdict::Drifted;
    else
      f.verdict = Verdict::Healthy;
    if (e.open && e.unit != Unit::Farad) f.rpe = std::numeric_limits<double>::infinity();
    out.push_back(f);
  }
  return out;
}

std::vector<ComponentEstimate> mean_components(const RunResult& res, const Aggregate& agg,
                                               const ComponentOptions& opt) {
  return from_coefficients(res.layout, agg.mean_coefficient, opt);
}

// ---- export ---------------------------------------------------------------------

std::string boxplot_svg(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& groups,
                        const std::string& title, const std::string& y_label, bool log_y) {
  const double W = std::max(360.0, 70.0 + 60.0 * static_cast<double>(groups.size())), H = 360.0;
  const double left = 70, right = 20, top = 40, bottom = 60;
  auto tf = [&](double v) { return log_y ? std::log10(std::max(v, 1e-300)) : v; };
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& g : groups)
    for (double v : g)
      if (std::isfinite(v) && (!log_y || v > 0)) {
        lo = std::min(lo, tf(v));
        hi = std::max(hi, tf(v));
      }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto y = [&](double v) { return top + (hi - tf(v)) / (hi - lo) * (H - top - bottom); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double tv = lo + (hi - lo) * t / 4.0;
    const double yy = top + (hi - tv) / (hi - lo) * (H - top - bottom);
    char buf[32];
    std::snprintf(buf, sizeof buf, log_y ? "1e%.1f" : "%.3g", tv);
    s << "<line x1=\"" << left - 4 << "\" y1=\"" << yy << "\" x2=\"" << left << "\" y2=\"" << yy << "\" stroke=\"black\"/>"
      << "<text x=\"" << left - 6 << "\" y=\"" << yy + 4 << "\" text-anchor=\"end\">" << buf << "</text>\n";
  }
  s << "<text transform=\"translate(14," << (top + H - bottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
    << "</text>\n";
  const double slot = (W - left - right) / std::max<size_t>(1, groups.size());
  for (size_t g = 0; g < groups.size(); ++g) {
    std::vector<double> v;
    for (double x : groups[g])
      if (std::isfinite(x) && (!log_y || x > 0)) v.push_back(x);
    const double cx = left + slot * (static_cast<double>(g) + 0.5);
    s << "<text x=\"" << cx << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">" << labels[g] << "</text>\n";
    if (v.empty()) continue;
    const double q1 = quantile(v, 0.25), q2 = quantile(v, 0.5), q3 = quantile(v, 0.75);
    const double iqr = q3 - q1;
    double wlo = q1, whi = q3;
    for (double x : v) {
      if (x >= q1 - 1.5 * iqr) wlo = std::min(wlo, x);
      if (x <= q3 + 1.5 * iqr) whi = std::max(whi, x);
    }
    const double bw = std::min(40.0, 0.6 * slot);
    s << "<line x1=\"" << cx << "\" y1=\"" << y(wlo) << "\" x2=\"" << cx << "\" y2=\"" << y(whi) << "\" stroke=\"black\"/>\n";
    s << "<rect x=\"" << cx - bw / 2 << "\" y=\"" << y(q3) << "\" width=\"" << bw << "\" height=\"" << std::max(0.5, y(q1) - y(q3))
      << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << cx - bw / 2 << "\" y1=\"" << y(q2) << "\" x2=\"" << cx + bw / 2 << "\" y2=\"" << y(q2)
      << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    for (double x : v)
      if (x < wlo || x > whi)
        s << "<circle cx=\"" << cx << "\" cy=\"" << y(x) << "\" r=\"2.5\" fill=\"none\" stroke=\"#d62728\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void export_results(const RunResult& res, const RunConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream f(fs::path(dir) / "estimates.csv");
    f << "run,N,seed,idx,name,value,unit,coefficient,open,rpe\n";
    for (const RunRecord& r : res.runs) {
      if (!r.ok) continue;
      for (size_t s = 0; s < r.components.size(); ++s) {
        const ComponentEstimate& c = r.components[s];
        f << r.run << ',' << r.N << ',' << r.seed << ',' << c.idx << ',' << c.name << ',' << num(c.value) << ','
          << unit_name(c.unit) << ',' << num(c.coefficient) << ',' << (c.open ? 1 : 0) << ','
          << num(component_rpe(c, res.truth[s], res.nominal[s])) << '\n';
      }
    }
  }
  {
    std::ofstream f(fs::path(dir) / "rmse.csv");
    f << "run,N,rmse,converged\n";
    for (const RunRecord& r : res.runs)
      if (r.ok) f << r.run << ',' << r.N << ',' << num(r.rmse) << ',' << (r.converged ? 1 : 0) << '\n';
  }
  {
    json j;
    j["version"] = kVersion;
    j["mode"] = cfg.mode == Mode::Full ? "full" : "subnet";
    j["master_seed"] = cfg.master_seed;
    j["mc_runs"] = cfg.mc_runs;
    j["lengths"] = cfg.lengths();
    j["seconds"] = res.seconds;
    json comps = json::array();
    for (size_t s = 0; s < res.layout.size(); ++s)
      comps.push_back({{"idx", s + 1},
                       {"name", res.layout[s].name},
                       {"unit", unit_name(res.truth[s].unit)},
                       {"true", finite_or_null(res.truth[s].value)},
                       {"nominal", finite_or_null(res.nominal[s].value)}});
    j["components"] = comps;
    json aggs = json::array();
    for (const Aggregate& a : res.aggregates) {
      json ja{{"N", a.N},
              {"ok", a.ok},
              {"failed", a.failed},
              {"not_converged", a.not_converged},
              {"rmse_median", finite_or_null(a.rmse_median)},
              {"rmse_q1", finite_or_null(a.rmse_q1)},
              {"rmse_q3", finite_or_null(a.rmse_q3)},
              {"rmse_mean", finite_or_null(a.rmse_mean)}};
      if (a.ok > a.not_converged) {
        const auto mc = mean_components(res, a, cfg.components);
        json m = json::array();
        for (size_t s = 0; s < mc.size(); ++s)
          m.push_back({{"name", mc[s].name},
                       {"value", finite_or_null(mc[s].value)},
                       {"coefficient", mc[s].coefficient},
                       {"open", mc[s].open},
                       {"rpe", finite_or_null(component_rpe(mc[s], res.truth[s], res.nominal[s]))}});
        ja["mean_components"] = m;
      }
      aggs.push_back(ja);
    }
    j["aggregates"] = aggs;
    json runs = json::array();
    for (const RunRecord& r : res.runs) {
      json jr{{"run", r.run}, {"N", r.N}, {"seed", r.seed}, {"ok", r.ok}, {"seconds", r.seconds}};
      if (!r.ok) {
        jr["error"] = r.error;
      } else {
        jr["converged"] = r.converged;
        jr["sk_iterations"] = r.sk_iterations;
        jr["smle_iterations"] = r.smle_iterations;
        jr["rmse"] = r.rmse;
        jr["invariants"] = {{"symmetric", r.invariants.symmetric},
                            {"topology_zero", r.invariants.topology_zero},
                            {"constraint_violation", r.invariants.constraint_violation},
                            {"cost_monotone", r.invariants.cost_monotone}};
      }
      runs.push_back(jr);
    }
    j["runs"] = runs;
    std::ofstream f(fs::path(dir) / "summary.json");
    f << j.dump(2) << '\n';
  }
  // RMSE against N, and RPE per component at the last length.
  std::vector<std::string> labels;
  std::vector<std::vector<double>> groups;
  for (const Aggregate& a : res.aggregates) {
    labels.push_back(std::to_string(a.N));
    std::vector<double> g;
    for (const RunRecord& r : res.runs)
      if (r.ok && r.converged && r.N == a.N) g.push_back(r.rmse);
    groups.push_back(g);
  }
  std::ofstream(fs::path(dir) / "rmse_boxplot.svg") << boxplot_svg(labels, groups, "RMSE of component coefficients", "RMSE", true);
  if (!res.aggregates.empty()) {
    const int N = res.aggregates.back().N;
    labels.clear();
    groups.assign(res.layout.size(), {});
    for (const auto& s : res.layout) labels.push_back(s.name);
    for (const RunRecord& r : res.runs)
      if (r.ok && r.converged && r.N == N)
        for (size_t s = 0; s < res.layout.size(); ++s)
          groups[s].push_back(component_rpe(r.components[s], res.truth[s], res.nominal[s]));
    std::ofstream(fs::path(dir) / "rpe_boxplot.svg")
        << boxplot_svg(labels, groups, "RPE per component (N = " + std::to_string(N) + ")", "RPE [%]");
  }
}

void export_fault_report(const std::vector<FaultEntry>& report, const std::string& path) {
  std::ofstream f(path);
  f << "name,estimate,nominal,unit,rpe,verdict\n";
  for (const FaultEntry& e : report)
    f << e.name << ',' << num(e.estimate) << ',' << num(e.nominal) << ',' << unit_name(e.unit) << ',' << num(e.rpe)
      << ',' << verdict_name(e.verdict) << '\n';
}

}  // namespace dcnid
