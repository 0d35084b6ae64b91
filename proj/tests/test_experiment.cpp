#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "dcnid/errors.hpp"
#include "dcnid/experiment.hpp"

using namespace dcnid;

namespace {

const char* kSmall = R"({
  "network": {
    "nodes": 3,
    "grounded_default": {"C": 1e-6, "R": 400, "L": 0.02},
    "edges": [{"between": [1, 2], "R": 100, "L": 0.01}, {"between": [2, 3], "R": 250}],
    "excitation": [1]
  },
  "experiment": {"N": 2000, "fs": 20000, "sigma_r2": 1, "sigma_e2": 1, "f_min": 300, "f_max": 5000},
  "mc_runs": 4,
  "master_seed": 5
})";

std::string with(const std::string& base, const std::string& key, const std::string& value) {
  // replace the tail of the object with an extra member
  const auto pos = base.rfind('}');
  return base.substr(0, pos) + ", \"" + key + "\": " + value + "}";
}

ComponentEstimate comp(const char* name, double value, Unit u, bool open = false) {
  ComponentEstimate e;
  e.name = name;
  e.unit = u;
  e.open = open;
  e.value = open ? (u == Unit::Farad ? 0.0 : INFINITY) : value;
  e.coefficient = open ? 0.0 : (u == Unit::Farad ? value : 1.0 / value);
  return e;
}

}  // namespace

TEST_CASE("relative squared coefficient error") {
  const std::vector<double> c{0.01, 0.005, 2e-6};
  std::vector<double> up;
  for (double v : c) up.push_back(1.01 * v);
  CHECK(rmse(up, c) == doctest::Approx(1e-4).epsilon(1e-9));
  CHECK(rmse(std::vector<double>(3, 0.0), c) == doctest::Approx(1.0));
  CHECK(rmse(c, c) == 0.0);
  CHECK_THROWS_AS(rmse({1.0}, c), DimensionMismatch);
}

TEST_CASE("relative percentage error") {
  CHECK(rpe(200.06, 200.0) == doctest::Approx(0.03));
  CHECK(rpe(17.92, 18.0) == doctest::Approx(-0.4444444).epsilon(1e-6));
}

TEST_CASE("config parsing") {
  const RunConfig cfg = parse_config(kSmall);
  CHECK(cfg.network.nodes == 3);
  CHECK(cfg.network.edges.size() == 2);
  CHECK(cfg.network.edges[1].j == 1);
  CHECK(cfg.network.excitation_nodes == std::vector<int>{0});
  CHECK(*cfg.network.grounded[2].L == 0.02);
  CHECK(cfg.experiment.sigma_e2 == 1.0);
  CHECK(cfg.mc_runs == 4);
  CHECK(cfg.mode == Mode::Full);
  CHECK_NOTHROW(cfg.check());

  CHECK_THROWS_AS(parse_config("{ nope"), InvalidConfig);
  CHECK_THROWS_AS(parse_config(R"({"experiment": {}})"), InvalidConfig);
  CHECK_THROWS_AS(parse_config(with(kSmall, "mode", "\"sideways\"")), InvalidConfig);
  CHECK_THROWS_AS(parse_config(with(kSmall, "mc_runs", "0")).check(), InvalidConfig);
  // subnet mode without a partition, and with J adjacent to an immersed node
  CHECK_THROWS_AS(parse_config(with(kSmall, "mode", "\"subnet\"")).check(), InvalidConfig);
  const std::string bad = with(with(kSmall, "mode", "\"subnet\""), "partition", R"({"J": [1], "D": []})");
  CHECK_THROWS_AS(parse_config(bad).check(), Error);
  const RunConfig sub = parse_config(with(with(kSmall, "mode", "\"subnet\""), "partition", R"({"J": [1], "D": [2]})"));
  REQUIRE(sub.partition);
  CHECK(sub.partition->I == std::vector<int>{2});

  const RunConfig shipped = load_config(std::string(DCNID_CONFIG_DIR) + "/full10_defect.json");
  CHECK(shipped.nominal);
  CHECK(shipped.network.excitation_nodes == std::vector<int>{2});
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), InvalidConfig);
}

TEST_CASE("fault verdicts") {
  const std::vector<ComponentEstimate> nominal{comp("R_12", 100.0, Unit::Ohm), comp("R_23", 250.0, Unit::Ohm),
                                               comp("L_12", 0.01, Unit::Henry), comp("C_10", 1e-6, Unit::Farad),
                                               comp("L_23", 0.0, Unit::Henry, true)};
  const std::vector<ComponentEstimate> est{comp("R_12", 103.0, Unit::Ohm), comp("R_23", 0.0, Unit::Ohm, true),
                                           comp("L_12", 0.0125, Unit::Henry), comp("C_10", 0.0, Unit::Farad, true),
                                           comp("L_23", 0.0, Unit::Henry, true)};
  const auto rep = fault_report(est, nominal, 10.0);
  REQUIRE(rep.size() == 5);
  CHECK(rep[0].verdict == Verdict::Healthy);
  CHECK(rep[0].rpe == doctest::Approx(3.0));
  CHECK(rep[1].verdict == Verdict::Open);
  CHECK(std::isinf(rep[1].rpe));
  CHECK(rep[2].verdict == Verdict::Drifted);
  CHECK(rep[2].rpe == doctest::Approx(25.0));
  CHECK(rep[3].verdict == Verdict::Open);
  CHECK(rep[3].rpe == doctest::Approx(-100.0));
  CHECK(rep[4].verdict == Verdict::Healthy);
  CHECK(std::string(verdict_name(Verdict::Drifted)) == "drifted");
  CHECK_THROWS_AS(fault_report(est, {}, 10.0), DimensionMismatch);
}

TEST_CASE("results do not depend on the worker count") {
  RunConfig cfg = parse_config(kSmall);
  cfg.workers = 1;
  const RunResult a = run_experiment(cfg);
  cfg.workers = 3;
  const RunResult b = run_experiment(cfg);
  REQUIRE(a.runs.size() == 4);
  REQUIRE(b.runs.size() == 4);
  for (size_t r = 0; r < a.runs.size(); ++r) {
    CHECK(a.runs[r].ok);
    CHECK(a.runs[r].seed == (5u ^ r));
    CHECK(a.runs[r].rmse == b.runs[r].rmse);
    for (size_t s = 0; s < a.layout.size(); ++s)
      CHECK(a.runs[r].components[s].coefficient == b.runs[r].components[s].coefficient);
  }
  CHECK(a.aggregates.at(0).ok == 4);
  CHECK(a.aggregates[0].rmse_median == b.aggregates[0].rmse_median);
  // different runs see different noise
  CHECK(a.runs[0].rmse != a.runs[1].rmse);
}

TEST_CASE("a sweep yields one aggregate per length and exports files") {
  RunConfig cfg = parse_config(kSmall);
  cfg.mc_runs = 2;
  cfg.sweep_N = {1000, 4000};
  const RunResult res = run_experiment(cfg);
  REQUIRE(res.aggregates.size() == 2);
  CHECK(res.aggregates[0].N == 1000);
  CHECK(res.aggregates[1].N == 4000);
  CHECK(res.runs[2].N == 4000);
  for (const RunRecord& r : res.runs) {
    CHECK(r.invariants.symmetric);
    CHECK(r.invariants.topology_zero);
    CHECK(r.invariants.cost_monotone);
    CHECK(r.invariants.constraint_violation < 1e-10);
  }
  const auto dir = std::filesystem::temp_directory_path() / "dcnid_export_test";
  std::filesystem::remove_all(dir);
  export_results(res, cfg, dir.string());
  for (const char* f : {"estimates.csv", "rmse.csv", "summary.json"}) CHECK(std::filesystem::exists(dir / f));
  std::ifstream svg(dir / "rmse_boxplot.svg");
  std::string head;
  std::getline(svg, head);
  CHECK(head.find("<svg") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("noiseless subnet identification recovers the target components") {
  RunConfig cfg = load_config(std::string(DCNID_CONFIG_DIR) + "/subnet7_consistency.json");
  cfg.experiment.sigma_e2 = 0.0;
  const RunRecord rec = run_once(cfg, 0, 6000);
  REQUIRE_MESSAGE(rec.ok, rec.error);
  const auto layout = subnet_component_layout(cfg.design(), *cfg.partition);
  REQUIRE(rec.components.size() == layout.size());
  for (size_t s = 0; s < layout.size(); ++s) {
    const double c = slot_coefficient(cfg.network, layout[s]);
    CHECK_MESSAGE(std::abs(rec.components[s].coefficient - c) <= 1e-6 * std::abs(c), layout[s].name);
  }
  CHECK(rec.invariants.symmetric);
  CHECK(rec.invariants.topology_zero);
  CHECK(rec.invariants.cost_monotone);
  CHECK(rec.invariants.constraint_violation < 1e-10);
}
