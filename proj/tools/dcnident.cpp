// dcnident: synthesise RLC network data, identify the network (or a
// subnetwork) and report component values and faults.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dcnid/errors.hpp"
#include "dcnid/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAllFailed = 3;

void log(const std::string& msg) { std::cerr << "[dcnident] " << msg << '\n'; }

int cmd_simulate(const dcnid::RunConfig& cfg) {
  dcnid::ExperimentConfig ec = cfg.experiment;
  ec.seed = cfg.master_seed;
  const dcnid::DCNModel model = dcnid::rlc_to_dcn(cfg.network, cfg.n_c);
  const dcnid::Excitation ex = dcnid::generate_excitation(ec, model.K());
  const dcnid::SpectralDataset ds =
      dcnid::select_band(dcnid::synth_frequency_data(model, ec, ex.R), ec.f_min, ec.f_max);
  std::filesystem::create_directories(cfg.output_dir);
  const std::string path = (std::filesystem::path(cfg.output_dir) / "dataset.csv").string();
  dcnid::write_dataset_csv(ds, path);
  log("wrote " + std::to_string(ds.F()) + " bins to " + path);
  return kExitOk;
}

int report_runs(const dcnid::RunResult& res) {
  for (const auto& r : res.runs)
    if (!r.ok) log("run " + std::to_string(r.run) + " (N=" + std::to_string(r.N) + ") failed: " + r.error);
  for (const auto& a : res.aggregates) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "N=%d ok=%d failed=%d not_converged=%d median RMSE=%.3e", a.N, a.ok, a.failed,
                  a.not_converged, a.rmse_median);
    log(buf);
  }
  if (!res.runs.empty() && res.failed() == static_cast<int>(res.runs.size())) {
    log("all runs failed");
    return kExitAllFailed;
  }
  return kExitOk;
}

int cmd_identify(const dcnid::RunConfig& cfg, bool fault_report) {
  log(std::string("running ") + (cfg.mode == dcnid::Mode::Full ? "full" : "subnet") + " identification, " +
      std::to_string(cfg.mc_runs) + " run(s) x " + std::to_string(cfg.lengths().size()) + " length(s)");
  const dcnid::RunResult res = dcnid::run_experiment(cfg);
  dcnid::export_results(res, cfg, cfg.output_dir);
  const int code = report_runs(res);
  if (code != kExitOk) return code;
  if (fault_report) {
    const auto& agg = res.aggregates.back();
    if (agg.ok == agg.not_converged) {
      log("no converged run to report on");
      return kExitAllFailed;
    }
    const auto est = dcnid::mean_components(res, agg, cfg.components);
    const auto rep = dcnid::fault_report(est, res.nominal, cfg.fault_threshold_percent);
    const std::string path = (std::filesystem::path(cfg.output_dir) / "fault_report.csv").string();
    dcnid::export_fault_report(rep, path);
    for (const auto& e : rep)
      if (e.verdict != dcnid::Verdict::Healthy) log(e.name + ": " + dcnid::verdict_name(e.verdict));
    log("wrote " + path);
  }
  log("results in " + cfg.output_dir);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identification of diffusively coupled RLC networks"};
  app.require_subcommand(1, 1);
  std::string config;
  std::uint64_t seed = 0;
  int runs = 0, workers = 0;
  std::string out;
  for (const char* name : {"simulate", "identify", "subnet", "montecarlo", "report"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--runs", runs, "Monte-Carlo runs (overrides the config)");
    sub->add_option("--out", out, "output directory (overrides the config)");
    sub->add_option("--workers", workers, "worker threads (overrides the config)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  dcnid::RunConfig cfg;
  try {
    cfg = dcnid::load_config(config);
    CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--seed")) cfg.master_seed = seed;
    if (sub->count("--runs")) cfg.mc_runs = runs;
    if (sub->count("--out")) cfg.output_dir = out;
    if (sub->count("--workers")) cfg.workers = workers;
    // identify/subnet run a single length; montecarlo keeps the sweep.
    if (cmd == "identify" || cmd == "subnet" || cmd == "report" || cmd == "simulate") cfg.sweep_N.clear();
    if (cmd == "identify") cfg.mode = dcnid::Mode::Full;
    if (cmd == "subnet") cfg.mode = dcnid::Mode::Subnet;
    cfg.check();
  } catch (const dcnid::Error& e) {
    log(std::string("config error: ") + e.what());
    return kExitConfig;
  }

  try {
    if (cmd == "simulate") return cmd_simulate(cfg);
    return cmd_identify(cfg, cmd == "report");
  } catch (const dcnid::InvalidConfig& e) {
    log(std::string("config error: ") + e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return kExitFailure;
  }
}
