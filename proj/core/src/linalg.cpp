#include "misshift/linalg.hpp"

#include <cmath>
#include <string>

#include "misshift/errors.hpp"

namespace misshift {

Matrix cholesky_factor(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("cholesky_factor: matrix not square");
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0) || !std::isfinite(diag)) {
      throw SingularMatrixError("cholesky_factor: matrix not positive definite at pivot " +
                                std::to_string(j));
    }
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Matrix solve_lower(const Matrix& l, const Matrix& b) {
  if (l.rows() != b.rows()) throw ShapeError("solve_lower: dimension mismatch");
  const std::size_t n = l.rows(), m = b.cols();
  Matrix x = b;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < m; ++c) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
      x(i, c) = s / l(i, i);
    }
  }
  return x;
}

Matrix solve_lower_transposed(const Matrix& l, const Matrix& b) {
  if (l.rows() != b.rows()) throw ShapeError("solve_lower_transposed: dimension mismatch");
  const std::size_t n = l.rows(), m = b.cols();
  Matrix x = b;
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t c = 0; c < m; ++c) {
      double s = x(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x(k, c);
      x(ii, c) = s / l(ii, ii);
    }
  }
  return x;
}

Matrix cholesky_solve(const Matrix& a, const Matrix& b) {
  return cholesky_solve_factored(cholesky_factor(a), b);
}

Matrix cholesky_solve_factored(const Matrix& l, const Matrix& b) {
  return solve_lower_transposed(l, solve_lower(l, b));
}

double log_det_from_factor(const Matrix& l) {
  double acc = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

}  // namespace misshift
