#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dcnid/polynomial.hpp"

namespace dcnid {

/// L x L adjacency mask; the diagonal is ignored.
using Topology = std::vector<std::vector<bool>>;

/// Diffusively coupled network A(p) w = B(p) r + F(p) e, plus the frequency-domain
/// transient C(p). A is symmetric; B is known.
struct DCNModel {
  PolynomialMatrix A;  // L x L
  PolynomialMatrix B;  // L x K
  PolynomialMatrix C;  // L x 1
  PolynomialMatrix F;  // L x L, identity unless set
  Topology topology;
  int n_a = 2;
  int n_b = 1;
  int n_c = 1;

  int L() const { return A.rows(); }
  int K() const { return B.cols(); }
};

struct GroundedElements {
  std::optional<double> C;  // farads
  std::optional<double> R;  // ohms
  std::optional<double> L;  // henries
  bool any() const { return C || R || L; }
};

struct RLCEdge {
  int j = 0;  // 0-based, j < k
  int k = 0;
  std::optional<double> C;
  std::optional<double> R;
  std::optional<double> L;
  bool any() const { return C || R || L; }
};

struct RLCNetwork {
  int nodes = 0;
  std::vector<GroundedElements> grounded;  // size nodes
  std::vector<RLCEdge> edges;
  std::vector<int> excitation_nodes;  // 0-based

  /// Throws InvalidNetwork on ordering, positivity, connectivity or
  /// missing-excitation violations.
  void check() const;
  Topology topology() const;
};

enum class Unit { Ohm, Henry, Farad };
const char* unit_name(Unit u);

/// One physical component recovered from (or assigned to) the model. The
/// coefficient is what the model actually stores: 1/R, 1/L or C.
struct ComponentEstimate {
  int idx = 0;  // 1-based reporting order
  std::string name;
  double value = std::numeric_limits<double>::infinity();
  Unit unit = Unit::Ohm;
  double coefficient = 0.0;
  bool open = false;      // coefficient below the open threshold (or non-positive)
  bool negative = false;  // recovered coefficient was negative beyond tolerance
};

/// Where a reported component lives in A(p): node pair (j == k for grounded)
/// and polynomial order (0: inductor, 1: resistor, 2: capacitor).
struct ComponentSlot {
  std::string name;
  int j = 0;
  int k = 0;
  int order = 0;
  bool grounded() const { return j == k; }
};

/// Canonical reporting order: coupling resistors, coupling inductors,
/// coupling capacitors (each in edge order), then C_j0, R_j0, L_j0 per node.
/// Only components present in the network are listed.
std::vector<ComponentSlot> component_layout(const RLCNetwork& design);

/// Same ordering, but every edge gets R, L and C and every node the full
/// grounded triple.
std::vector<ComponentSlot> component_layout(const Topology& topology);

/// Coefficient of a slot in a network (0 when the component is absent).
double slot_coefficient(const RLCNetwork& net, const ComponentSlot& slot);
/// Coefficient of a slot in a model: -a_jk,l for couplings, row sum for grounded.
double slot_coefficient(const DCNModel& model, const ComponentSlot& slot);

DCNModel rlc_to_dcn(const RLCNetwork& net, int n_c = 1);

struct ComponentOptions {
  /// A coefficient is open when below this fraction of the median magnitude
  /// of nonzero same-order coefficients of the same kind (coupling/grounded).
  double open_relative = 1e-2;
  /// Negative grounded residuals within this fraction of |a_jj,l| are clamped.
  double negative_clamp = 1e-6;
};

/// Per-kind, per-order thresholds used to declare a coefficient open.
struct OpenThresholds {
  double coupling[3] = {0.0, 0.0, 0.0};
  double grounded[3] = {0.0, 0.0, 0.0};
  double for_slot(const ComponentSlot& s) const {
    return s.grounded() ? grounded[s.order] : coupling[s.order];
  }
};

OpenThresholds open_thresholds(const DCNModel& model, const ComponentOptions& opt = {});

/// Converts a coefficient into a reported component value. Open resistors and
/// inductors report +Inf; an open capacitor reports 0 F.
ComponentEstimate make_component(const ComponentSlot& slot, int idx, double coefficient,
                                 double threshold, double clamp_scale, const ComponentOptions& opt);

std::vector<ComponentEstimate> dcn_to_components(const DCNModel& model,
                                                 const std::vector<ComponentSlot>& layout,
                                                 const ComponentOptions& opt = {});
std::vector<ComponentEstimate> dcn_to_components(const DCNModel& model,
                                                 const ComponentOptions& opt = {});

/// A = X + Y with X diagonal (grounded) and Y a Laplacian (couplings).
std::pair<PolynomialMatrix, PolynomialMatrix> decompose_xy(const DCNModel& model);

struct ValidationOptions {
  double omega_min = 2.0 * 3.14159265358979323846 * 100.0;
  double omega_max = 2.0 * 3.14159265358979323846 * 1e4;
  int rank_probes = 16;
  unsigned seed = 7;
  bool check_stability = true;
};

std::vector<std::string> validate(const DCNModel& model, const ValidationOptions& opt = {});

bool is_connected(const Topology& topology);

}  // namespace dcnid
