// Test-only reference implementations, kept independent of the library's
// computation paths: Gauss-Jordan inversion (vs Cholesky solves), Simpson
// quadrature (vs closed forms), and central finite differences (vs
// reverse-mode gradients).
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "misshift/matrix.hpp"

namespace misshift::testing {

inline Matrix gauss_jordan_inverse(Matrix a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("gauss_jordan_inverse: not square");
  Matrix inv = Matrix::identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::fabs(a(r, col)) > std::fabs(a(pivot, col))) pivot = r;
    }
    if (a(pivot, col) == 0.0) throw std::invalid_argument("gauss_jordan_inverse: singular");
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(a(col, j), a(pivot, j));
        std::swap(inv(col, j), inv(pivot, j));
      }
    }
    const double p = a(col, col);
    for (std::size_t j = 0; j < n; ++j) {
      a(col, j) /= p;
      inv(col, j) /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        a(r, j) -= f * a(col, j);
        inv(r, j) -= f * inv(col, j);
      }
    }
  }
  return inv;
}

inline double simpson(const std::function<double(double)>& f, double a, double b,
                      std::size_t intervals) {
  if (intervals % 2 == 1) ++intervals;
  const double h = (b - a) / static_cast<double>(intervals);
  double acc = f(a) + f(b);
  for (std::size_t i = 1; i < intervals; ++i) {
    acc += f(a + h * static_cast<double>(i)) * (i % 2 == 1 ? 4.0 : 2.0);
  }
  return acc * h / 3.0;
}

// Central finite differences of a scalar function of a parameter list.
inline std::vector<Matrix> finite_difference_gradients(
    std::vector<Matrix> params, const std::function<double(const std::vector<Matrix>&)>& f,
    double h = 1e-5) {
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix g(params[k].rows(), params[k].cols());
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double orig = params[k][i];
      params[k][i] = orig + h;
      const double up = f(params);
      params[k][i] = orig - h;
      const double down = f(params);
      params[k][i] = orig;
      g[i] = (up - down) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// Max relative error over gradient entries whose reference magnitude exceeds
// the floor (tiny gradients are dominated by the FD truncation error).
inline double max_gradient_rel_error(const std::vector<Matrix>& analytic,
                                     const std::vector<Matrix>& reference,
                                     double magnitude_floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    for (std::size_t i = 0; i < analytic[k].size(); ++i) {
      const double ref = reference[k][i];
      if (std::fabs(ref) <= magnitude_floor) continue;
      worst = std::max(worst, std::fabs(analytic[k][i] - ref) / std::fabs(ref));
    }
  }
  return worst;
}

inline double sample_mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size());
}

}  // namespace misshift::testing
