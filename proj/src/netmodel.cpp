#include "dcnid/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "dcnid/errors.hpp"

namespace dcnid {

namespace {

std::string pair_label(int j, int k) {
  // 1-based, "13" for small indices, "9-10" once either index has two digits.
  const int a = j + 1;
  const int b = k + 1;
  if (a < 10 && b < 10) return std::to_string(a) + std::to_string(b);
  return std::to_string(a) + "-" + std::to_string(b);
}

std::string grounded_label(int j) {
  const int a = j + 1;
  if (a < 10) return std::to_string(a) + "0";
  return std::to_string(a) + "-0";
}

const char kOrderLetter[3] = {'L', 'R', 'C'};

double coefficient_of(const std::optional<double>& v, int order) {
  if (!v) return 0.0;
  return order == 2 ? *v : 1.0 / *v;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const std::optional<double>& element(const GroundedElements& g, int order) {
  return order == 0 ? g.L : (order == 1 ? g.R : g.C);
}

const std::optional<double>& element(const RLCEdge& e, int order) {
  return order == 0 ? e.L : (order == 1 ? e.R : e.C);
}

}  // namespace

const char* unit_name(Unit u) {
  switch (u) {
    case Unit::Ohm:
      return "ohm";
    case Unit::Henry:
      return "henry";
    case Unit::Farad:
      return "farad";
  }
  return "?";
}

bool is_connected(const Topology& topology) {
  const int n = static_cast<int>(topology.size());
  if (n == 0) return false;
  std::vector<bool> seen(n, false);
  std::vector<int> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int v = 0; v < n; ++v)
      if (v != u && topology[u][v] && !seen[v]) {
        seen[v] = true;
        stack.push_back(v);
      }
  }
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

Topology RLCNetwork::topology() const {
  Topology t(nodes, std::vector<bool>(nodes, false));
  for (const auto& e : edges)
    if (e.any()) t[e.j][e.k] = t[e.k][e.j] = true;
  return t;
}

void RLCNetwork::check() const {
  if (nodes <= 0) throw InvalidNetwork("network has no nodes");
  if (static_cast<int>(grounded.size()) != nodes)
    throw InvalidNetwork("grounded element list must have one entry per node");
  auto positive = [](const std::optional<double>& v) { return !v || *v > 0.0; };
  for (int j = 0; j < nodes; ++j) {
    const auto& g = grounded[j];
    if (!positive(g.C) || !positive(g.R) || !positive(g.L))
      throw InvalidNetwork("grounded values must be strictly positive at node " + std::to_string(j + 1));
  }
  std::vector<bool> has_element(nodes, false);
  for (int j = 0; j < nodes; ++j) has_element[j] = grounded[j].any();
  for (const auto& e : edges) {
    if (e.j < 0 || e.k >= nodes || e.j >= e.k)
      throw InvalidNetwork("edge (" + std::to_string(e.j + 1) + "," + std::to_string(e.k + 1) +
                           ") must satisfy 1 <= j < k <= L");
    if (!positive(e.C) || !positive(e.R) || !positive(e.L))
      throw InvalidNetwork("coupling values must be strictly positive on edge " + pair_label(e.j, e.k));
    if (e.any()) has_element[e.j] = has_element[e.k] = true;
  }
  for (int j = 0; j < nodes; ++j)
    if (!has_element[j]) throw InvalidNetwork("node " + std::to_string(j + 1) + " has no components");
  if (excitation_nodes.empty()) throw InvalidNetwork("at least one excitation node is required");
  for (int x : excitation_nodes)
    if (x < 0 || x >= nodes) throw InvalidNetwork("excitation node out of range");
  if (!is_connected(topology())) throw InvalidNetwork("network is not connected");
}

std::vector<ComponentSlot> component_layout(const RLCNetwork& design) {
  std::vector<ComponentSlot> out;
  for (int order : {1, 0, 2})
    for (const auto& e : design.edges)
      if (element(e, order)) out.push_back({std::string(1, kOrderLetter[order]) + "_" + pair_label(e.j, e.k), e.j, e.k, order});
  for (int j = 0; j < design.nodes; ++j)
    for (int order : {2, 1, 0})
      if (element(design.grounded[j], order))
        out.push_back({std::string(1, kOrderLetter[order]) + "_" + grounded_label(j), j, j, order});
  return out;
}

std::vector<ComponentSlot> component_layout(const Topology& topology) {
  std::vector<ComponentSlot> out;
  const int n = static_cast<int>(topology.size());
  for (int order : {1, 0, 2})
    for (int j = 0; j < n; ++j)
      for (int k = j + 1; k < n; ++k)
        if (topology[j][k]) out.push_back({std::string(1, kOrderLetter[order]) + "_" + pair_label(j, k), j, k, order});
  for (int j = 0; j < n; ++j)
    for (int order : {2, 1, 0}) out.push_back({std::string(1, kOrderLetter[order]) + "_" + grounded_label(j), j, j, order});
  return out;
}

double slot_coefficient(const RLCNetwork& net, const ComponentSlot& slot) {
  if (slot.grounded()) return coefficient_of(element(net.grounded[slot.j], slot.order), slot.order);
  for (const auto& e : net.edges)
    if (e.j == std::min(slot.j, slot.k) && e.k == std::max(slot.j, slot.k))
      return coefficient_of(element(e, slot.order), slot.order);
  return 0.0;
}

double slot_coefficient(const DCNModel& model, const ComponentSlot& slot) {
  if (!slot.grounded()) return -model.A(slot.j, slot.k).coeff(slot.order);
  double s = 0.0;
  for (int k = 0; k < model.L(); ++k) s += model.A(slot.j, k).coeff(slot.order);
  return s;
}

DCNModel rlc_to_dcn(const RLCNetwork& net, int n_c) {
  net.check();
  const int L = net.nodes;
  const int K = static_cast<int>(net.excitation_nodes.size());
  std::vector<std::vector<std::vector<double>>> a(L, std::vector<std::vector<double>>(L, std::vector<double>(3, 0.0)));
  for (int j = 0; j < L; ++j)
    for (int order = 0; order < 3; ++order) a[j][j][order] = coefficient_of(element(net.grounded[j], order), order);
  for (const auto& e : net.edges)
    for (int order = 0; order < 3; ++order) {
      const double c = coefficient_of(element(e, order), order);
      if (c == 0.0) continue;
      a[e.j][e.k][order] -= c;
      a[e.k][e.j][order] -= c;
      a[e.j][e.j][order] += c;
      a[e.k][e.k][order] += c;
    }
  DCNModel m;
  m.A = PolynomialMatrix(L, L);
  for (int j = 0; j < L; ++j)
    for (int k = 0; k < L; ++k) m.A(j, k) = Polynomial(a[j][k]);
  m.B = PolynomialMatrix(L, K);
  for (int x = 0; x < K; ++x) m.B(net.excitation_nodes[x], x) = Polynomial::monomial(1.0, 1);
  m.C = PolynomialMatrix(L, 1);
  m.F = PolynomialMatrix::identity(L);
  m.topology = net.topology();
  m.n_a = 2;
  m.n_b = 1;
  m.n_c = n_c;
  return m;
}

OpenThresholds open_thresholds(const DCNModel& model, const ComponentOptions& opt) {
  OpenThresholds t;
  const int L = model.L();
  for (int order = 0; order < 3; ++order) {
    std::vector<double> coupling, grounded;
    for (int j = 0; j < L; ++j) {
      double row = 0.0;
      for (int k = 0; k < L; ++k) {
        const double c = model.A(j, k).coeff(order);
        row += c;
        if (k > j && model.topology[j][k] && c != 0.0) coupling.push_back(std::abs(c));
      }
      if (row != 0.0) grounded.push_back(std::abs(row));
    }
    t.coupling[order] = opt.open_relative * median(coupling);
    t.grounded[order] = opt.open_relative * median(grounded);
  }
  return t;
}

ComponentEstimate make_component(const ComponentSlot& slot, int idx, double coefficient, double threshold,
                                 double clamp_scale, const ComponentOptions& opt) {
  ComponentEstimate c;
  c.idx = idx;
  c.name = slot.name;
  c.unit = slot.order == 0 ? Unit::Henry : (slot.order == 1 ? Unit::Ohm : Unit::Farad);
  c.coefficient = coefficient;
  if (coefficient < 0.0 && -coefficient > opt.negative_clamp * clamp_scale) c.negative = true;
  const bool open = coefficient <= 0.0 || std::abs(coefficient) < threshold;
  c.open = open;
  if (slot.order == 2)
    c.value = open ? 0.0 : coefficient;
  else
    c.value = open ? std::numeric_limits<double>::infinity() : 1.0 / coefficient;
  return c;
}

std::vector<ComponentEstimate> dcn_to_components(const DCNModel& model, const std::vector<ComponentSlot>& layout,
                                                 const ComponentOptions& opt) {
  if (model.n_a != 2 || model.A.max_order() > 2)
    throw InvalidNetwork("dcn_to_components requires a second-order (RLC) model");
  const OpenThresholds th = open_thresholds(model, opt);
  std::vector<ComponentEstimate> out;
  out.reserve(layout.size());
  int idx = 1;
  for (const auto& slot : layout) {
    const double coef = slot_coefficient(model, slot);
    const double scale = slot.grounded() ? std::abs(model.A(slot.j, slot.j).coeff(slot.order)) : std::abs(coef);
    out.push_back(make_component(slot, idx++, coef, th.for_slot(slot), scale, opt));
  }
  return out;
}

std::vector<ComponentEstimate> dcn_to_components(const DCNModel& model, const ComponentOptions& opt) {
  return dcn_to_components(model, component_layout(model.topology), opt);
}

std::pair<PolynomialMatrix, PolynomialMatrix> decompose_xy(const DCNModel& model) {
  const int L = model.L();
  PolynomialMatrix X(L, L), Y(L, L);
  for (int j = 0; j < L; ++j) {
    Polynomial off;
    for (int k = 0; k < L; ++k) {
      if (k == j) continue;
      Y(j, k) = model.A(j, k);
      off += model.A(j, k);
    }
    Y(j, j) = -off;
    X(j, j) = model.A(j, j) - Y(j, j);
  }
  return {X, Y};
}

std::vector<std::string> validate(const DCNModel& model, const ValidationOptions& opt) {
  std::vector<std::string> diag;
  const int L = model.L();
  if (!model.A.square()) {
    diag.push_back("A is not square");
    return diag;
  }
  if (model.B.rows() != L) diag.push_back("B row count differs from A");
  if (static_cast<int>(model.topology.size()) != L) {
    diag.push_back("topology mask has wrong size");
    return diag;
  }
  if (!model.A.is_symmetric(0.0)) diag.push_back("A is not symmetric");
  for (int j = 0; j < L; ++j)
    for (int k = j + 1; k < L; ++k) {
      const bool nz = !model.A(j, k).is_zero() || !model.A(k, j).is_zero();
      if (nz && !model.topology[j][k])
        diag.push_back("a_" + pair_label(j, k) + " is nonzero but the topology has no edge");
      if (!nz && model.topology[j][k])
        diag.push_back("topology has edge " + pair_label(j, k) + " but a_" + pair_label(j, k) + " is zero");
    }
  if (!is_connected(model.topology)) diag.push_back("network is not connected");

  if (model.B.rows() == L) {
    std::mt19937 gen(opt.seed);
    std::uniform_real_distribution<double> u(std::log(opt.omega_min), std::log(opt.omega_max));
    int deficient = 0;
    for (int i = 0; i < opt.rank_probes; ++i) {
      const cplx om(0.0, std::exp(u(gen)));
      Eigen::MatrixXcd ab(L, L + model.K());
      ab << eval_at(model.A, om), eval_at(model.B, om);
      Eigen::JacobiSVD<Eigen::MatrixXcd> svd(ab);
      const auto& s = svd.singularValues();
      if (s.size() < L || s(L - 1) <= 1e-10 * s(0)) ++deficient;
    }
    if (deficient > 0)
      diag.push_back("[A B] loses rank at " + std::to_string(deficient) + " of " +
                     std::to_string(opt.rank_probes) + " probe frequencies");
  }

  if (opt.check_stability && diag.empty()) {
    const Polynomial d = det(model.A);
    if (d.is_zero()) {
      diag.push_back("det A(p) is identically zero");
    } else {
      int unstable = 0;
      for (const cplx& r : roots(d))
        if (r.real() >= -1e-9 * std::max(std::abs(r), 1.0)) ++unstable;
      if (unstable > 0) diag.push_back("det A(p) has " + std::to_string(unstable) + " roots outside the open left half-plane");
    }
  }
  return diag;
}

}  // namespace dcnid
