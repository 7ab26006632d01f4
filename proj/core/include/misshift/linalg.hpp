#pragma once

#include "misshift/matrix.hpp"

namespace misshift {

// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
// Throws SingularMatrixError when a pivot is not strictly positive.
Matrix cholesky_factor(const Matrix& a);

// Solves L y = b (forward) and L^T x = y (backward) for a lower factor L.
Matrix solve_lower(const Matrix& l, const Matrix& b);
Matrix solve_lower_transposed(const Matrix& l, const Matrix& b);

// X with A X = B for symmetric positive-definite A, via one factorization.
Matrix cholesky_solve(const Matrix& a, const Matrix& b);
Matrix cholesky_solve_factored(const Matrix& l, const Matrix& b);

// log det(A) from a lower factor.
double log_det_from_factor(const Matrix& l);

}  // namespace misshift
