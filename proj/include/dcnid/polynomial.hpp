#pragma once

#include <complex>
#include <initializer_list>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dcnid {

using cplx = std::complex<double>;

// Coefficients whose magnitude falls below this fraction of the terms that
// produced them are treated as cancellation dust and set to zero.
inline constexpr double kTrimTol = 1e-12;
inline constexpr double kGcdTol = 1e-8;
inline constexpr double kDivideTol = 1e-8;

/// Real polynomial in the differential operator p, stored in ascending powers.
///
/// Arithmetic detects cancellation per coefficient: a result coefficient is
/// zeroed when it is below kTrimTol times the sum of magnitudes of the terms
/// that formed it. This is scale-free in p, which matters because physical
/// coefficients (1/L ~ 1e2, C ~ 1e-6) span many decades.
class Polynomial {
 public:
  Polynomial() = default;
  Polynomial(std::initializer_list<double> coeffs);
  explicit Polynomial(std::vector<double> coeffs);

  static Polynomial constant(double c);
  static Polynomial monomial(double c, int power);

  /// Index of the highest nonzero coefficient; -1 for the zero polynomial.
  int degree() const { return static_cast<int>(c_.size()) - 1; }
  bool is_zero() const { return c_.empty(); }
  const std::vector<double>& coeffs() const { return c_; }
  double coeff(int i) const { return (i >= 0 && i < static_cast<int>(c_.size())) ? c_[i] : 0.0; }
  double leading() const { return c_.empty() ? 0.0 : c_.back(); }
  double max_abs() const;

  cplx operator()(cplx x) const;
  double operator()(double x) const;

  /// Drops coefficients below rel_tol times the largest coefficient magnitude.
  Polynomial trimmed(double rel_tol = kTrimTol) const;
  Polynomial monic() const;
  Polynomial derivative() const;
  /// q(x) = p(s x): coefficient i is multiplied by s^i.
  Polynomial scaled_variable(double s) const;

  Polynomial operator-() const;
  Polynomial& operator+=(const Polynomial& o);
  Polynomial& operator-=(const Polynomial& o);
  Polynomial& operator*=(const Polynomial& o);
  Polynomial& operator*=(double s);

  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
  friend Polynomial operator*(const Polynomial& a, const Polynomial& b);
  friend Polynomial operator*(Polynomial a, double s) { return a *= s; }
  friend Polynomial operator*(double s, Polynomial a) { return a *= s; }
  friend bool operator==(const Polynomial& a, const Polynomial& b) { return a.c_ == b.c_; }

 private:
  void strip();
  std::vector<double> c_;
};

/// Quotient and remainder of polynomial long division. Throws on den == 0.
std::pair<Polynomial, Polynomial> divmod(const Polynomial& num, const Polynomial& den);

/// Quotient of an exact division; throws RemainderTooLarge when the remainder
/// exceeds tol times the size of num (both measured in a balanced variable).
Polynomial divide_exact(const Polynomial& num, const Polynomial& den, double tol = kDivideTol);

/// Monic approximate GCD via the Euclidean remainder sequence.
Polynomial poly_gcd(const Polynomial& a, const Polynomial& b, double tol = kGcdTol);

/// Roots from the eigenvalues of the companion matrix (balanced variable).
std::vector<cplx> roots(const Polynomial& p);

/// Rows x cols grid of polynomials, row-major.
class PolynomialMatrix {
 public:
  PolynomialMatrix() = default;
  PolynomialMatrix(int rows, int cols);

  static PolynomialMatrix identity(int n);
  /// Builds sum_l coeffs[l] * p^l.
  static PolynomialMatrix from_coefficients(const std::vector<Eigen::MatrixXd>& coeffs);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }
  bool square() const { return rows_ == cols_; }

  Polynomial& operator()(int i, int j) { return e_[static_cast<size_t>(i) * cols_ + j]; }
  const Polynomial& operator()(int i, int j) const { return e_[static_cast<size_t>(i) * cols_ + j]; }

  int max_order() const;
  /// Real matrix of the p^l coefficients.
  Eigen::MatrixXd coefficient_matrix(int l) const;
  bool is_symmetric(double tol = 0.0) const;

  PolynomialMatrix transpose() const;
  PolynomialMatrix block(const std::vector<int>& row_idx, const std::vector<int>& col_idx) const;

  PolynomialMatrix& operator+=(const PolynomialMatrix& o);
  PolynomialMatrix& operator-=(const PolynomialMatrix& o);
  friend PolynomialMatrix operator+(PolynomialMatrix a, const PolynomialMatrix& b) { return a += b; }
  friend PolynomialMatrix operator-(PolynomialMatrix a, const PolynomialMatrix& b) { return a -= b; }
  friend PolynomialMatrix operator*(const PolynomialMatrix& a, const PolynomialMatrix& b);
  friend PolynomialMatrix operator*(const Polynomial& s, const PolynomialMatrix& m);
  friend bool operator==(const PolynomialMatrix& a, const PolynomialMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.e_ == b.e_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Polynomial> e_;
};

/// Reciprocal condition estimate of an LU factorisation that is also zero
/// for an exactly singular factor (Eigen's estimate alone can report 1 there).
double lu_rcond(const Eigen::PartialPivLU<Eigen::MatrixXcd>& lu);

/// Element-wise Horner evaluation at a complex frequency.
Eigen::MatrixXcd eval_at(const PolynomialMatrix& m, cplx omega);

/// Symbolic determinant: cofactor expansion up to 3x3, fraction-free Bareiss above.
Polynomial det(const PolynomialMatrix& m);

/// Transposed matrix of signed cofactors.
PolynomialMatrix adjugate(const PolynomialMatrix& m);

}  // namespace dcnid
