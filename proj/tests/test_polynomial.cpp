#include <doctest.h>

#include <algorithm>
#include <random>

#include "dcnid/errors.hpp"
#include "dcnid/polynomial.hpp"

using namespace dcnid;

namespace {

Polynomial from_roots(const std::vector<double>& r, double lead = 1.0) {
  Polynomial p = Polynomial::constant(lead);
  for (double x : r) p *= Polynomial{-x, 1.0};
  return p;
}

// Leibniz expansion, used as an independent oracle for det().
Polynomial leibniz_det(const PolynomialMatrix& m) {
  const int n = m.rows();
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  Polynomial acc;
  do {
    int inv = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) inv += perm[i] > perm[j];
    Polynomial term = Polynomial::constant(inv % 2 ? -1.0 : 1.0);
    for (int i = 0; i < n; ++i) term *= m(i, perm[i]);
    acc += term;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return acc;
}

PolynomialMatrix random_matrix(int n, int order, std::mt19937& rng) {
  std::uniform_int_distribution<int> d(-3, 3);
  PolynomialMatrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      std::vector<double> c(order + 1);
      for (auto& x : c) x = d(rng);
      m(i, j) = Polynomial(c);
    }
  return m;
}

}  // namespace

TEST_CASE("polynomial arithmetic and evaluation") {
  const Polynomial a{1, 2, 3};  // 1 + 2p + 3p^2
  const Polynomial b{-1, 1};
  CHECK((a * b).coeffs() == std::vector<double>{-1, -1, -1, 3});
  CHECK((a + b).coeffs() == std::vector<double>{0, 3, 3});
  CHECK((a - a).is_zero());
  CHECK(a(2.0) == doctest::Approx(17.0));
  const cplx j{0.0, 1.0};
  CHECK(std::abs(a(j) - cplx(-2.0, 2.0)) < 1e-15);
  CHECK(a.derivative().coeffs() == std::vector<double>{2, 6});
  CHECK(a.scaled_variable(2.0).coeffs() == std::vector<double>{1, 4, 12});
}

TEST_CASE("divmod reconstructs the dividend") {
  const Polynomial num{3, -2, 0, 5, 1};
  const Polynomial den{1, 0, 2};
  const auto [q, r] = divmod(num, den);
  CHECK(r.degree() < den.degree());
  const Polynomial back = q * den + r;
  for (int i = 0; i <= num.degree(); ++i) CHECK(back.coeff(i) == doctest::Approx(num.coeff(i)));
  CHECK_THROWS_AS(divmod(num, Polynomial{}), Error);
}

TEST_CASE("divide_exact rejects a non-divisor") {
  const Polynomial p = from_roots({1.0, 2.0, -3.0});
  const Polynomial q = divide_exact(p, from_roots({2.0}));
  const Polynomial expect = from_roots({1.0, -3.0});
  for (int i = 0; i <= 2; ++i) CHECK(q.coeff(i) == doctest::Approx(expect.coeff(i)));
  CHECK_THROWS_AS(divide_exact(p, from_roots({5.0})), RemainderTooLarge);
}

TEST_CASE("gcd of polynomials with a shared root pair") {
  const Polynomial a = from_roots({-1.0, -2.0, -5.0}, 3.0);
  const Polynomial b = from_roots({-2.0, -5.0, 4.0}, -2.0);
  const Polynomial g = poly_gcd(a, b);
  const Polynomial expect = from_roots({-2.0, -5.0});  // monic
  REQUIRE(g.degree() == 2);
  for (int i = 0; i <= 2; ++i) CHECK(g.coeff(i) == doctest::Approx(expect.coeff(i)));
  CHECK(poly_gcd(from_roots({1.0}), from_roots({2.0})).degree() == 0);
}

TEST_CASE("roots of a polynomial with widely scaled coefficients") {
  // Physical scales: roots near -1e3 and -5e4.
  const Polynomial p = from_roots({-1e3, -5e4}, 2e-6);
  auto r = roots(p);
  std::sort(r.begin(), r.end(), [](cplx x, cplx y) { return x.real() < y.real(); });
  REQUIRE(r.size() == 2);
  CHECK(r[0].real() == doctest::Approx(-5e4).epsilon(1e-10));
  CHECK(r[1].real() == doctest::Approx(-1e3).epsilon(1e-10));
}

TEST_CASE("determinant matches the Leibniz expansion and A adj(A) = det(A) I") {
  std::mt19937 rng(3);
  for (int n : {1, 2, 3, 4, 5}) {
    const PolynomialMatrix m = random_matrix(n, 2, rng);
    const Polynomial d = det(m);
    const Polynomial oracle = leibniz_det(m);
    CHECK(d.degree() == oracle.degree());
    for (int i = 0; i <= oracle.degree(); ++i) CHECK(d.coeff(i) == doctest::Approx(oracle.coeff(i)));
    const PolynomialMatrix prod = m * adjugate(m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const Polynomial expect = i == j ? oracle : Polynomial{};
        for (int l = 0; l <= std::max(prod(i, j).degree(), expect.degree()); ++l)
          CHECK(prod(i, j).coeff(l) == doctest::Approx(expect.coeff(l)));
      }
  }
}

TEST_CASE("evaluation of a polynomial matrix agrees with the determinant") {
  std::mt19937 rng(9);
  const PolynomialMatrix m = random_matrix(4, 2, rng);
  const cplx s{0.3, 1.7};
  const cplx numeric = eval_at(m, s).determinant();
  CHECK(std::abs(det(m)(s) - numeric) < 1e-9 * std::abs(numeric));
}

TEST_CASE("matrix helpers") {
  PolynomialMatrix m(2, 2);
  m(0, 0) = {1, 2};
  m(0, 1) = {3};
  m(1, 0) = {3};
  m(1, 1) = {0, 0, 4};
  CHECK(m.is_symmetric());
  CHECK(m.max_order() == 2);
  CHECK(m.coefficient_matrix(0)(0, 1) == 3.0);
  CHECK(m.block({1}, {0, 1})(0, 1).coeffs() == std::vector<double>{0, 0, 4});
  m(1, 0) = {2.5};
  CHECK_FALSE(m.is_symmetric());
  CHECK(m.transpose()(0, 1).coeffs() == std::vector<double>{2.5});
}
