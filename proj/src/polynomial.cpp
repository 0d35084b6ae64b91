#include "dcnid/polynomial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dcnid/errors.hpp"

namespace dcnid {

namespace {

double cancel(double value, double magnitude) {
  return std::abs(value) <= kTrimTol * magnitude ? 0.0 : value;
}

double max_abs_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Scale s such that p(s x) has comparable lowest and highest coefficients.
double balance_factor(const Polynomial& p) {
  const int n = p.degree();
  if (n <= 0) return 1.0;
  int lo = 0;
  while (p.coeff(lo) == 0.0) ++lo;
  if (lo == n) return 1.0;
  return std::pow(std::abs(p.coeff(lo)) / std::abs(p.leading()), 1.0 / (n - lo));
}

}  // namespace

Polynomial::Polynomial(std::initializer_list<double> coeffs) : c_(coeffs) { strip(); }

Polynomial::Polynomial(std::vector<double> coeffs) : c_(std::move(coeffs)) { strip(); }

Polynomial Polynomial::constant(double c) { return Polynomial(std::vector<double>{c}); }

Polynomial Polynomial::monomial(double c, int power) {
  std::vector<double> v(static_cast<size_t>(power) + 1, 0.0);
  v.back() = c;
  return Polynomial(std::move(v));
}

void Polynomial::strip() {
  while (!c_.empty() && c_.back() == 0.0) c_.pop_back();
}

double Polynomial::max_abs() const { return max_abs_of(c_); }

cplx Polynomial::operator()(cplx x) const {
  cplx acc = 0.0;
  for (auto it = c_.rbegin(); it != c_.rend(); ++it) acc = acc * x + *it;
  return acc;
}

double Polynomial::operator()(double x) const {
  double acc = 0.0;
  for (auto it = c_.rbegin(); it != c_.rend(); ++it) acc = acc * x + *it;
  return acc;
}

Polynomial Polynomial::trimmed(double rel_tol) const {
  const double cut = rel_tol * max_abs();
  std::vector<double> v = c_;
  for (double& x : v)
    if (std::abs(x) <= cut) x = 0.0;
  return Polynomial(std::move(v));
}

Polynomial Polynomial::monic() const {
  if (is_zero()) return {};
  Polynomial r = *this;
  const double lead = leading();
  for (double& x : r.c_) x /= lead;
  r.c_.back() = 1.0;
  return r;
}

Polynomial Polynomial::derivative() const {
  if (c_.size() <= 1) return {};
  std::vector<double> v(c_.size() - 1);
  for (size_t i = 1; i < c_.size(); ++i) v[i - 1] = c_[i] * static_cast<double>(i);
  return Polynomial(std::move(v));
}

Polynomial Polynomial::scaled_variable(double s) const {
  std::vector<double> v = c_;
  double f = 1.0;
  for (double& x : v) {
    x *= f;
    f *= s;
  }
  return Polynomial(std::move(v));
}

Polynomial Polynomial::operator-() const {
  Polynomial r = *this;
  for (double& x : r.c_) x = -x;
  return r;
}

Polynomial& Polynomial::operator+=(const Polynomial& o) {
  if (o.c_.size() > c_.size()) c_.resize(o.c_.size(), 0.0);
  for (size_t i = 0; i < o.c_.size(); ++i) {
    const double mag = std::abs(c_[i]) + std::abs(o.c_[i]);
    c_[i] = cancel(c_[i] + o.c_[i], mag);
  }
  strip();
  return *this;
}

Polynomial& Polynomial::operator-=(const Polynomial& o) {
  if (o.c_.size() > c_.size()) c_.resize(o.c_.size(), 0.0);
  for (size_t i = 0; i < o.c_.size(); ++i) {
    const double mag = std::abs(c_[i]) + std::abs(o.c_[i]);
    c_[i] = cancel(c_[i] - o.c_[i], mag);
  }
  strip();
  return *this;
}

Polynomial operator*(const Polynomial& a, const Polynomial& b) {
  if (a.is_zero() || b.is_zero()) return {};
  const size_t n = a.c_.size() + b.c_.size() - 1;
  std::vector<double> v(n, 0.0);
  std::vector<double> mag(n, 0.0);
  for (size_t i = 0; i < a.c_.size(); ++i)
    for (size_t j = 0; j < b.c_.size(); ++j) {
      const double t = a.c_[i] * b.c_[j];
      v[i + j] += t;
      mag[i + j] += std::abs(t);
    }
  for (size_t k = 0; k < n; ++k) v[k] = cancel(v[k], mag[k]);
  return Polynomial(std::move(v));
}

Polynomial& Polynomial::operator*=(const Polynomial& o) { return *this = *this * o; }

Polynomial& Polynomial::operator*=(double s) {
  if (s == 0.0) {
    c_.clear();
    return *this;
  }
  for (double& x : c_) x *= s;
  return *this;
}

std::pair<Polynomial, Polynomial> divmod(const Polynomial& num, const Polynomial& den) {
  if (den.is_zero()) throw Error("polynomial division by zero");
  if (num.degree() < den.degree()) return {Polynomial{}, num};
  std::vector<double> r = num.coeffs();
  const int dn = den.degree();
  const int qn = num.degree() - dn;
  std::vector<double> q(static_cast<size_t>(qn) + 1, 0.0);
  const double lead = den.leading();
  for (int k = qn; k >= 0; --k) {
    const double f = r[k + dn] / lead;
    q[k] = f;
    for (int i = 0; i <= dn; ++i) r[k + i] -= f * den.coeff(i);
    r[k + dn] = 0.0;
  }
  r.resize(static_cast<size_t>(dn));
  return {Polynomial(std::move(q)), Polynomial(std::move(r))};
}

Polynomial divide_exact(const Polynomial& num, const Polynomial& den, double tol) {
  if (den.is_zero()) throw Error("divide_exact: zero denominator");
  if (num.is_zero()) return {};
  const double s = balance_factor(den);
  const Polynomial ns = num.scaled_variable(s);
  const Polynomial ds = den.scaled_variable(s);
  auto [q, r] = divmod(ns, ds);
  if (r.max_abs() > tol * ns.max_abs())
    throw RemainderTooLarge("divide_exact: remainder " + std::to_string(r.max_abs()) +
                            " exceeds tolerance");
  return q.scaled_variable(1.0 / s);
}

Polynomial poly_gcd(const Polynomial& a, const Polynomial& b, double tol) {
  if (a.is_zero() && b.is_zero()) throw Error("poly_gcd: both inputs are zero");
  if (b.is_zero()) return a.monic();
  if (a.is_zero()) return b.monic();
  const double s = std::sqrt(balance_factor(a) * balance_factor(b));
  Polynomial x = a.scaled_variable(s).monic();
  Polynomial y = b.scaled_variable(s).monic();
  if (x.degree() < y.degree()) std::swap(x, y);
  while (!y.is_zero()) {
    if (y.degree() == 0) return Polynomial::constant(1.0);
    Polynomial r = divmod(x, y).second;
    if (r.max_abs() <= tol * x.max_abs()) r = Polynomial{};
    x = std::move(y);
    y = r.monic();
  }
  return x.scaled_variable(1.0 / s).monic();
}

std::vector<cplx> roots(const Polynomial& p) {
  std::vector<cplx> out;
  int lo = 0;
  while (lo <= p.degree() && p.coeff(lo) == 0.0) {
    out.emplace_back(0.0, 0.0);
    ++lo;
  }
  std::vector<double> rest(p.coeffs().begin() + lo, p.coeffs().end());
  const Polynomial q(std::move(rest));
  const int n = q.degree();
  if (n <= 0) return out;
  const double s = balance_factor(q);
  const Polynomial m = q.scaled_variable(s).monic();
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
  for (int i = 0; i < n; ++i) comp(i, n - 1) = -m.coeff(i);
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
  for (int i = 0; i < n; ++i) out.push_back(es.eigenvalues()(i) * s);
  return out;
}

// ---------------------------------------------------------------------------

PolynomialMatrix::PolynomialMatrix(int rows, int cols)
    : rows_(rows), cols_(cols), e_(static_cast<size_t>(rows) * cols) {}

PolynomialMatrix PolynomialMatrix::identity(int n) {
  PolynomialMatrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = Polynomial::constant(1.0);
  return m;
}

PolynomialMatrix PolynomialMatrix::from_coefficients(const std::vector<Eigen::MatrixXd>& coeffs) {
  if (coeffs.empty()) return {};
  const int r = static_cast<int>(coeffs[0].rows());
  const int c = static_cast<int>(coeffs[0].cols());
  PolynomialMatrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      std::vector<double> v(coeffs.size());
      for (size_t l = 0; l < coeffs.size(); ++l) {
        if (coeffs[l].rows() != r || coeffs[l].cols() != c)
          throw DimensionMismatch("from_coefficients: inconsistent shapes");
        v[l] = coeffs[l](i, j);
      }
      m(i, j) = Polynomial(std::move(v));
    }
  return m;
}

int PolynomialMatrix::max_order() const {
  int d = -1;
  for (const auto& p : e_) d = std::max(d, p.degree());
  return d;
}

Eigen::MatrixXd PolynomialMatrix::coefficient_matrix(int l) const {
  Eigen::MatrixXd out(rows_, cols_);
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j) out(i, j) = (*this)(i, j).coeff(l);
  return out;
}

bool PolynomialMatrix::is_symmetric(double tol) const {
  if (!square()) return false;
  for (int i = 0; i < rows_; ++i)
    for (int j = i + 1; j < cols_; ++j) {
      const auto& a = (*this)(i, j);
      const auto& b = (*this)(j, i);
      const int n = std::max(a.degree(), b.degree());
      for (int l = 0; l <= n; ++l) {
        const double x = a.coeff(l);
        const double y = b.coeff(l);
        if (std::abs(x - y) > tol * std::max(std::abs(x), std::abs(y))) return false;
      }
    }
  return true;
}

PolynomialMatrix PolynomialMatrix::transpose() const {
  PolynomialMatrix t(cols_, rows_);
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

PolynomialMatrix PolynomialMatrix::block(const std::vector<int>& row_idx,
                                         const std::vector<int>& col_idx) const {
  PolynomialMatrix b(static_cast<int>(row_idx.size()), static_cast<int>(col_idx.size()));
  for (size_t i = 0; i < row_idx.size(); ++i)
    for (size_t j = 0; j < col_idx.size(); ++j) b(static_cast<int>(i), static_cast<int>(j)) = (*this)(row_idx[i], col_idx[j]);
  return b;
}

PolynomialMatrix& PolynomialMatrix::operator+=(const PolynomialMatrix& o) {
  if (rows_ != o.rows_ || cols_ != o.cols_) throw DimensionMismatch("PolynomialMatrix +: shape mismatch");
  for (size_t i = 0; i < e_.size(); ++i) e_[i] += o.e_[i];
  return *this;
}

PolynomialMatrix& PolynomialMatrix::operator-=(const PolynomialMatrix& o) {
  if (rows_ != o.rows_ || cols_ != o.cols_) throw DimensionMismatch("PolynomialMatrix -: shape mismatch");
  for (size_t i = 0; i < e_.size(); ++i) e_[i] -= o.e_[i];
  return *this;
}

PolynomialMatrix operator*(const PolynomialMatrix& a, const PolynomialMatrix& b) {
  if (a.cols_ != b.rows_) throw DimensionMismatch("PolynomialMatrix *: inner dimensions differ");
  PolynomialMatrix c(a.rows_, b.cols_);
  for (int i = 0; i < a.rows_; ++i)
    for (int j = 0; j < b.cols_; ++j) {
      // Accumulate coefficient-wise so cancellation is judged against the full sum.
      std::vector<double> v;
      std::vector<double> mag;
      for (int k = 0; k < a.cols_; ++k) {
        const auto& x = a(i, k);
        const auto& y = b(k, j);
        if (x.is_zero() || y.is_zero()) continue;
        const size_t n = x.coeffs().size() + y.coeffs().size() - 1;
        if (v.size() < n) {
          v.resize(n, 0.0);
          mag.resize(n, 0.0);
        }
        for (size_t s = 0; s < x.coeffs().size(); ++s)
          for (size_t t = 0; t < y.coeffs().size(); ++t) {
            const double prod = x.coeffs()[s] * y.coeffs()[t];
            v[s + t] += prod;
            mag[s + t] += std::abs(prod);
          }
      }
      for (size_t s = 0; s < v.size(); ++s) v[s] = cancel(v[s], mag[s]);
      c(i, j) = Polynomial(std::move(v));
    }
  return c;
}

PolynomialMatrix operator*(const Polynomial& s, const PolynomialMatrix& m) {
  PolynomialMatrix r = m;
  for (auto& p : r.e_) p = s * p;
  return r;
}

double lu_rcond(const Eigen::PartialPivLU<Eigen::MatrixXcd>& lu) {
  const Eigen::MatrixXcd& U = lu.matrixLU();
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    const double a = std::abs(U(i, i));
    if (!std::isfinite(a)) return 0.0;
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  if (!(lo > 0.0)) return 0.0;
  return std::min(lu.rcond(), lo / hi);
}

Eigen::MatrixXcd eval_at(const PolynomialMatrix& m, cplx omega) {
  Eigen::MatrixXcd out(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out(i, j) = m(i, j)(omega);
  return out;
}

namespace {

Polynomial det_cofactor(const PolynomialMatrix& m) {
  const int n = m.rows();
  if (n == 0) return Polynomial::constant(1.0);
  if (n == 1) return m(0, 0);
  if (n == 2) return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  Polynomial acc;
  for (int j = 0; j < n; ++j) {
    if (m(0, j).is_zero()) continue;
    std::vector<int> rows, cols;
    for (int i = 1; i < n; ++i) rows.push_back(i);
    for (int k = 0; k < n; ++k)
      if (k != j) cols.push_back(k);
    const Polynomial minor = det_cofactor(m.block(rows, cols));
    if (j % 2 == 0)
      acc += m(0, j) * minor;
    else
      acc -= m(0, j) * minor;
  }
  return acc;
}

Polynomial det_bareiss(PolynomialMatrix m) {
  const int n = m.rows();
  double sign = 1.0;
  Polynomial prev = Polynomial::constant(1.0);
  for (int k = 0; k < n - 1; ++k) {
    if (m(k, k).is_zero()) {
      int piv = -1;
      for (int i = k + 1; i < n; ++i)
        if (!m(i, k).is_zero()) {
          piv = i;
          break;
        }
      if (piv < 0) return {};
      for (int j = 0; j < n; ++j) std::swap(m(k, j), m(piv, j));
      sign = -sign;
    }
    for (int i = k + 1; i < n; ++i) {
      for (int j = k + 1; j < n; ++j) {
        Polynomial t = m(k, k) * m(i, j) - m(i, k) * m(k, j);
        m(i, j) = divide_exact(t, prev, 1e-6);
      }
      m(i, k) = Polynomial{};
    }
    prev = m(k, k);
  }
  return sign * m(n - 1, n - 1);
}

}  // namespace

Polynomial det(const PolynomialMatrix& m) {
  if (!m.square()) throw DimensionMismatch("det: matrix is not square");
  if (m.rows() <= 3) return det_cofactor(m);
  return det_bareiss(m);
}

PolynomialMatrix adjugate(const PolynomialMatrix& m) {
  if (!m.square()) throw DimensionMismatch("adjugate: matrix is not square");
  const int n = m.rows();
  PolynomialMatrix adj(n, n);
  if (n == 1) {
    adj(0, 0) = Polynomial::constant(1.0);
    return adj;
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      std::vector<int> rows, cols;
      for (int r = 0; r < n; ++r)
        if (r != i) rows.push_back(r);
      for (int c = 0; c < n; ++c)
        if (c != j) cols.push_back(c);
      Polynomial cof = det(m.block(rows, cols));
      // adj(j, i) = (-1)^{i+j} * minor(i, j)
      adj(j, i) = ((i + j) % 2 == 0) ? cof : -cof;
    }
  return adj;
}

}  // namespace dcnid
