#include <doctest.h>

#include <cmath>

#include "dcnid/errors.hpp"
#include "dcnid/structest.hpp"

using namespace dcnid;

namespace {

RLCNetwork chain3() {
  RLCNetwork n;
  n.nodes = 3;
  n.grounded = {GroundedElements{1e-6, 400.0, 0.02}, GroundedElements{2e-6, std::nullopt, 0.03},
                GroundedElements{1.5e-6, 300.0, std::nullopt}};
  RLCEdge a;
  a.j = 0;
  a.k = 1;
  a.R = 100.0;
  a.L = 0.01;
  RLCEdge b;
  b.j = 1;
  b.k = 2;
  b.R = 250.0;
  n.edges = {a, b};
  n.excitation_nodes = {0};
  return n;
}

Eigen::MatrixXd random_matrix(Philox& p, int r, int c) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = p.normal();
  return m;
}

// Null-space oracle: theta = theta_p + N z, z minimising the quadratic.
Eigen::VectorXd nullspace_solution(const Eigen::MatrixXd& H, const Eigen::MatrixXd& G, const Eigen::VectorXd& u) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(G, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Index m = G.rows(), P = G.cols();
  const Eigen::VectorXd tp = svd.solve(u);
  const Eigen::MatrixXd N = svd.matrixV().rightCols(P - m);
  const Eigen::VectorXd z = (N.transpose() * H * N).ldlt().solve(-N.transpose() * H * tp);
  return tp + N * z;
}

}  // namespace

TEST_CASE("parameter layout packs symmetric A once") {
  const ParamLayout lay(3, 2, 2, 1, 1);
  CHECK(lay.size_a() == 6 * 3);
  CHECK(lay.size_b() == 3 * 2 * 2);
  CHECK(lay.size_c() == 3 * 2);
  CHECK(lay.index_a(0, 2, 1) == lay.index_a(2, 0, 1));
  for (int idx = 0; idx < lay.size(); ++idx) {
    const auto c = lay.coord(idx);
    switch (c.block) {
      case ParamLayout::Block::A: CHECK(lay.index_a(c.i, c.j, c.l) == idx); break;
      case ParamLayout::Block::B: CHECK(lay.index_b(c.i, c.j, c.l) == idx); break;
      case ParamLayout::Block::C: CHECK(lay.index_c(c.i, c.l) == idx); break;
    }
  }
  const DCNModel m = rlc_to_dcn(chain3());
  const ParamLayout l1(3, 1, 2, 1, 1);
  const Eigen::VectorXd th = l1.pack(m);
  const DCNModel back = l1.unpack(th);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int l = 0; l <= 2; ++l) CHECK(back.A(i, j).coeff(l) == m.A(i, j).coeff(l));
  CHECK(back.B(0, 0).coeff(1) == 1.0);
  CHECK((l1.pack(back) - th).norm() == 0.0);
}

TEST_CASE("regressor reproduces the weighted equation error") {
  Philox p(21, 0);
  const ParamLayout lay(3, 2, 2, 1, 1);
  Eigen::VectorXd th(lay.size());
  for (int i = 0; i < lay.size(); ++i) th(i) = p.normal();
  Eigen::VectorXcd W(3), R(2);
  for (int i = 0; i < 3; ++i) W(i) = cplx(p.normal(), p.normal());
  for (int i = 0; i < 2; ++i) R(i) = cplx(p.normal(), p.normal());
  Eigen::MatrixXcd Wt(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) Wt(i, j) = cplx(p.normal(), p.normal());
  const cplx om(0.0, 1.7);
  const DCNModel m = lay.unpack(th);
  const Eigen::VectorXcd direct =
      Wt * (eval_at(m.A, om) * W - eval_at(m.B, om) * R - eval_at(m.C, om).col(0));
  const Eigen::MatrixXcd Q = build_regressor(W, R, Wt, om, lay);
  CHECK((Q * th.cast<cplx>() - direct).norm() < 1e-12 * direct.norm());
}

TEST_CASE("weight whitens the previous model and the noise factor") {
  Philox p(4, 0);
  Eigen::MatrixXcd X(3, 3), A(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      X(i, j) = cplx(p.normal(), p.normal());
      A(i, j) = cplx(p.normal(), p.normal());
    }
  const Eigen::MatrixXcd Cw = X * X.adjoint() + Eigen::MatrixXcd::Identity(3, 3);
  const Eigen::MatrixXcd Lc = weight_factor(Cw, 0.0);
  CHECK((Lc * Lc.adjoint() - Cw).norm() < 1e-12 * Cw.norm());
  const Eigen::MatrixXcd Wk = build_weight(Cw, A);
  CHECK((Wk * A * Lc - Eigen::MatrixXcd::Identity(3, 3)).norm() < 1e-10);

  Eigen::MatrixXcd S = Eigen::MatrixXcd::Identity(3, 3);
  S(2, 2) = 0.0;
  CHECK_THROWS_AS(build_weight(Eigen::MatrixXcd::Identity(3, 3), S), SingularWeight);
}

TEST_CASE("KKT solution agrees with a null-space oracle") {
  Philox p(8, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const int P = 12, m = 4;
    const Eigen::MatrixXd X = random_matrix(p, 30, P);
    const Eigen::MatrixXd H = X.transpose() * X;
    ConstraintSet cs;
    cs.Gamma = random_matrix(p, m, P);
    cs.upsilon = random_matrix(p, m, 1);
    const Eigen::VectorXd th = kkt_solve(H, cs).theta;
    const Eigen::VectorXd ref = nullspace_solution(H, cs.Gamma, cs.upsilon);
    CHECK((th - ref).norm() <= 1e-8 * ref.norm());
    CHECK(cs.violation(th) < 1e-10);
    // same problem through the stacked-regressor path
    CHECK((constrained_lsq(X, cs) - ref).norm() <= 1e-8 * ref.norm());
  }
}

TEST_CASE("unit constraint rows are met exactly") {
  Philox p(9, 0);
  const Eigen::MatrixXd X = random_matrix(p, 20, 6);
  ConstraintSet cs;
  cs.Gamma = Eigen::MatrixXd::Zero(2, 6);
  cs.Gamma(0, 1) = 1.0;
  cs.Gamma(1, 4) = 1.0;
  cs.upsilon = Eigen::Vector2d(0.0, 0.3);
  const Eigen::VectorXd a = kkt_solve(Eigen::MatrixXd(X.transpose() * X), cs).theta;
  const Eigen::VectorXd b = constrained_lsq(X, cs);
  CHECK(a(1) == 0.0);
  CHECK(a(4) == 0.3);
  CHECK(b(1) == 0.0);
  CHECK(b(4) == 0.3);
}

TEST_CASE("constraint construction") {
  const RLCNetwork net = chain3();
  const DCNModel m = rlc_to_dcn(net);
  const ParamLayout lay(3, 1, 2, 1, 1);
  const auto zeros = design_zero_a(lay, m.topology, design_orders(net));
  // absent edge 1-3: all three orders; node 2 has no grounded R but the
  // couplings bring order 1, so its diagonal keeps every order
  CHECK(std::count(zeros.begin(), zeros.end(), lay.index_a(0, 2, 0)) == 1);
  CHECK(std::count(zeros.begin(), zeros.end(), lay.index_a(0, 2, 2)) == 1);
  CHECK(std::count(zeros.begin(), zeros.end(), lay.index_a(1, 2, 0)) == 1);  // no L on edge 2-3
  CHECK(std::count(zeros.begin(), zeros.end(), lay.index_a(0, 1, 2)) == 1);  // no C on edge 1-2
  CHECK(std::count(zeros.begin(), zeros.end(), lay.index_a(1, 1, 1)) == 0);

  const ConstraintSet cs = build_constraints(lay, m.B, zeros);
  CHECK(cs.violation(lay.pack(m)) == 0.0);
  const auto fm = cs.free_mask();
  CHECK(!fm[lay.index_b(0, 0, 1)]);
  CHECK(fm[lay.index_a(0, 0, 1)]);
  CHECK(fm[lay.index_c(2, 1)]);

  CHECK_THROWS_AS(build_constraints(lay, m.B, zeros, {{lay.index_b(0, 0, 1), 2.0}}), InvalidConstraints);
  CHECK_THROWS_AS(build_constraints(lay, PolynomialMatrix(3, 1), zeros), InvalidConstraints);
  std::vector<Eigen::VectorXd> rows(2, Eigen::VectorXd::Zero(4));
  rows[0](0) = rows[1](0) = 1.0;
  CHECK_THROWS_AS(finalize_constraints(rows, {1.0, 1.0}), InvalidConstraints);
}

TEST_CASE("SK recovers a noiseless network in a few iterations") {
  const RLCNetwork net = chain3();
  const DCNModel m = rlc_to_dcn(net);
  ExperimentConfig cfg;
  cfg.N = 4096;
  cfg.fs = 20000.0;
  cfg.sigma_e2 = 0.0;
  cfg.f_min = 300.0;
  cfg.f_max = 5000.0;
  cfg.seed = 17;
  const Excitation ex = generate_excitation(cfg, 1);
  const SpectralDataset ds = select_band(synth_frequency_data(m, cfg, ex.R), cfg.f_min, cfg.f_max);
  const NonparamEstimate np = run_lpm(ds, LpmSettings{});
  const ParamLayout lay(3, 1, 2, 1, 1);
  const ConstraintSet cs = build_constraints(lay, m.B, design_zero_a(lay, m.topology, design_orders(net)));
  for (bool qr : {false, true}) {
    SkSettings s;
    s.use_qr = qr;
    const SkResult r = sk_identify(ds, np, lay, cs, s);
    const Eigen::VectorXd truth = lay.pack(m);
    const int nab = lay.size_a() + lay.size_b();
    for (int i = 0; i < nab; ++i) {
      if (truth(i) == 0.0) {
        CHECK(r.theta(i) == 0.0);
      } else {
        CHECK(std::abs(r.theta(i) / truth(i) - 1.0) < 1e-6);
      }
    }
    CHECK(r.converged);
    CHECK(r.history.size() <= 4);
  }
}
