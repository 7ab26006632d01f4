#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "misshift/adam.hpp"
#include "misshift/autodiff.hpp"
#include "misshift/errors.hpp"
#include "misshift/linalg.hpp"
#include "misshift/matrix.hpp"
#include "misshift/rng.hpp"
#include "support/oracles.hpp"

using namespace misshift;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal(0.0, sd);
  return m;
}

Matrix random_pd(std::size_t n, Rng& rng, double ridge = 0.5) {
  const Matrix b = random_matrix(n, n, rng);
  Matrix a = matmul_nt(b, b);
  for (std::size_t i = 0; i < n; ++i) a(i, i) += ridge;
  return a;
}

}  // namespace

TEST_CASE("matrix shape errors") {
  Matrix a(2, 3), b(2, 2);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(hadamard(a, b), ShapeError);
}

TEST_CASE("matmul against hand results") {
  const Matrix a = Matrix::of({{1, 2}, {3, 4}});
  const Matrix b = Matrix::of({{5, 6}, {7, 8}});
  const Matrix c = matmul(a, b);
  CHECK(c(0, 0) == 19);
  CHECK(c(0, 1) == 22);
  CHECK(c(1, 0) == 43);
  CHECK(c(1, 1) == 50);
  CHECK(bitwise_equal(matmul_tn(transpose(a), b), matmul(a, b)));
  CHECK(bitwise_equal(matmul_nt(a, transpose(b)), matmul(a, b)));
}

TEST_CASE("quadratic loss gradient") {
  // loss = sum(w . w) via mse against zero, w = [1, 2]
  Tape tape;
  Value w = tape.input(Matrix::of({{1, 2}}), true);
  Value prod = tape.elemwise_mul(w, w);
  // mean((w^2 - 0)^2) would square again; build sum(w.w) as mse(w,0)*n:
  // simpler check via elemwise product and mse against zero on w itself.
  Value zero = tape.constant(Matrix(1, 2, 0.0));
  Value loss2 = tape.mse_loss(w, zero);  // = (1 + 4)/2
  auto [lv, grads] = forward_backward(tape, loss2, {w});
  CHECK(lv == doctest::Approx(2.5));
  // d/dw mean(w^2) = 2w/n = [1, 2]
  CHECK(grads[0](0, 0) == doctest::Approx(1.0));
  CHECK(grads[0](0, 1) == doctest::Approx(2.0));
  CHECK(tape.value(prod)(0, 1) == doctest::Approx(4.0));
}

TEST_CASE("sigmoid at zero") {
  Tape tape;
  Value x = tape.input(Matrix(1, 1, 0.0), true);
  Value s = tape.sigmoid(x);
  CHECK(tape.scalar(s) == doctest::Approx(0.5));
  Value target = tape.constant(Matrix(1, 1, 0.0));
  Value loss = tape.mse_loss(s, target);
  auto [lv, grads] = forward_backward(tape, loss, {x});
  // d/dx (sigmoid(x)^2) = 2 s s(1-s) = 2 * 0.5 * 0.25 = 0.25
  CHECK(lv == doctest::Approx(0.25));
  CHECK(grads[0](0, 0) == doctest::Approx(0.25));
}

TEST_CASE("non-scalar loss rejected") {
  Tape tape;
  Value w = tape.input(Matrix(1, 2, 1.0), true);
  CHECK_THROWS_AS(tape.backward(w), ContractError);
}

TEST_CASE("two-layer MLP gradients match finite differences") {
  Rng rng(7);
  const std::size_t n = 6, d = 4, hdim = 5;
  const Matrix x = random_matrix(n, d, rng);
  const Matrix y = random_matrix(n, 1, rng);

  std::vector<Matrix> params = {random_matrix(d, hdim, rng, 0.5), Matrix(1, hdim, 0.1),
                                random_matrix(hdim, 1, rng, 0.5), Matrix(1, 1, 0.0)};

  auto loss_of = [&](const std::vector<Matrix>& p) {
    Tape tape;
    Value vx = tape.constant(x);
    Value h = tape.relu(tape.add(tape.matmul(vx, tape.constant(p[0])), tape.constant(p[1])));
    Value out = tape.add(tape.matmul(h, tape.constant(p[2])), tape.constant(p[3]));
    return tape.scalar(tape.mse_loss(out, tape.constant(y)));
  };

  Tape tape;
  Value vx = tape.constant(x);
  std::vector<Value> vp;
  for (const Matrix& p : params) vp.push_back(tape.input(p, true));
  Value h = tape.relu(tape.add(tape.matmul(vx, vp[0]), vp[1]));
  Value out = tape.add(tape.matmul(h, vp[2]), vp[3]);
  Value loss = tape.mse_loss(out, tape.constant(y));
  auto [lv, grads] = forward_backward(tape, loss, vp);
  CHECK(lv == doctest::Approx(loss_of(params)));

  const auto fd = testing::finite_difference_gradients(params, loss_of);
  CHECK(testing::max_gradient_rel_error(grads, fd) < 1e-4);
}

TEST_CASE("all op kinds carry correct gradients") {
  Rng rng(11);
  const std::size_t n = 5, d = 6;
  const Matrix x = random_matrix(n, d, rng);
  const Matrix y = random_matrix(n, 1, rng);
  Matrix maskm(n, d);
  for (std::size_t i = 0; i < maskm.size(); ++i) maskm[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;

  std::vector<Matrix> params = {random_matrix(d, d, rng, 0.4), random_matrix(d, 1, rng, 0.6),
                                random_matrix(3, 1, rng, 0.6)};

  auto loss_of = [&](const std::vector<Matrix>& p) {
    Tape tape;
    Value vx = tape.constant(x);
    Value vm = tape.constant(maskm);
    Value lin = tape.elemwise_mul(tape.matmul(vx, tape.constant(p[0])), vm);
    Value sig = tape.sigmoid(tape.slice_cols(lin, 0, 3));
    Value cdf = tape.gaussian_cdf(tape.slice_cols(lin, 3, d));
    Value cat = tape.concat_cols(sig, cdf);
    Value left = tape.matmul(cat, tape.constant(p[1]));
    Value right = tape.matmul(tape.slice_cols(cat, 0, 3), tape.constant(p[2]));
    Value out = tape.add(left, right);
    return tape.scalar(tape.mse_loss(out, tape.constant(y)));
  };

  Tape tape;
  Value vx = tape.constant(x);
  Value vm = tape.constant(maskm);
  std::vector<Value> vp;
  for (const Matrix& p : params) vp.push_back(tape.input(p, true));
  Value lin = tape.elemwise_mul(tape.matmul(vx, vp[0]), vm);
  Value sig = tape.sigmoid(tape.slice_cols(lin, 0, 3));
  Value cdf = tape.gaussian_cdf(tape.slice_cols(lin, 3, d));
  Value cat = tape.concat_cols(sig, cdf);
  Value out = tape.add(tape.matmul(cat, vp[1]), tape.matmul(tape.slice_cols(cat, 0, 3), vp[2]));
  Value loss = tape.mse_loss(out, tape.constant(y));
  auto [lv, grads] = forward_backward(tape, loss, vp);
  (void)lv;
  const auto fd = testing::finite_difference_gradients(params, loss_of);
  CHECK(testing::max_gradient_rel_error(grads, fd) < 1e-4);
}

TEST_CASE("elemwise mask multiplication zeroes masked adjoints") {
  Rng rng(3);
  const std::size_t n = 4, d = 5;
  Matrix mask01(n, d);
  for (std::size_t i = 0; i < mask01.size(); ++i) mask01[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  Tape tape;
  Value w = tape.input(random_matrix(n, d, rng), true);
  Value masked = tape.elemwise_mul(w, tape.constant(mask01));
  Value loss = tape.mse_loss(masked, tape.constant(Matrix(n, d, 1.0)));
  auto [lv, grads] = forward_backward(tape, loss, {w});
  (void)lv;
  for (std::size_t i = 0; i < mask01.size(); ++i) {
    if (mask01[i] == 0.0) {
      CHECK(grads[0][i] == 0.0);
    } else {
      CHECK(grads[0][i] != 0.0);
    }
  }
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  std::vector<Matrix> params = {Matrix::of({{1.0, -2.0}})};
  AdamState state(0.1, 0.0, params);
  const std::vector<Matrix> grads = {Matrix(1, 2, 0.0)};
  adam_step(state, params, grads);
  CHECK(params[0](0, 0) == 1.0);
  CHECK(params[0](0, 1) == -2.0);
}

TEST_CASE("adam first step approximates lr times sign") {
  // Hand evaluation: m = 0.1, v = 1e-3, bias-corrected to 1 and 1, so the
  // update is lr / (1 + eps).
  std::vector<Matrix> params = {Matrix(1, 1, 1.0)};
  AdamState state(0.1, 0.0, params);
  adam_step(state, params, {Matrix(1, 1, 1.0)});
  CHECK(params[0](0, 0) == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adam decoupled decay shrinks toward zero") {
  std::vector<Matrix> params = {Matrix(1, 1, 1.0)};
  AdamState state(0.1, 0.1, params);
  adam_step(state, params, {Matrix(1, 1, 0.0)});
  CHECK(params[0](0, 0) == doctest::Approx(1.0 - 0.1 * 0.1 * 1.0));
}

TEST_CASE("adam rejects non-finite gradients") {
  std::vector<Matrix> params = {Matrix(1, 1, 1.0)};
  AdamState state(0.1, 0.0, params);
  CHECK_THROWS_AS(adam_step(state, params, {Matrix(1, 1, std::nan(""))}), DivergenceError);
}

TEST_CASE("batch norm constant column maps to zero") {
  Tape tape;
  BatchNormState state(2);
  Matrix x(4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    x(i, 0) = 3.0;
    x(i, 1) = static_cast<double>(i);
  }
  Value g = tape.constant(Matrix(1, 2, 1.0));
  Value b = tape.constant(Matrix(1, 2, 0.0));
  Value out = tape.batch_norm(tape.constant(x), g, b, state);
  for (std::size_t i = 0; i < 4; ++i) CHECK(tape.value(out)(i, 0) == 0.0);
}

TEST_CASE("batch norm two-point column") {
  Tape tape;
  BatchNormState state(1);
  const Matrix x = Matrix::of({{-1.0}, {1.0}});
  Value out = tape.batch_norm(tape.constant(x), tape.constant(Matrix(1, 1, 1.0)),
                              tape.constant(Matrix(1, 1, 0.0)), state);
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(tape.value(out)(0, 0) == doctest::Approx(-expected).epsilon(1e-12));
  CHECK(tape.value(out)(1, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("batch norm eval mode is affine identity under unit stats") {
  BatchNormState state(2);
  state.training = false;
  Tape tape;
  Rng rng(5);
  const Matrix x = random_matrix(3, 2, rng);
  Value out = tape.batch_norm(tape.constant(x), tape.constant(Matrix(1, 2, 1.0)),
                              tape.constant(Matrix(1, 2, 0.0)), state);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(tape.value(out)[i] == doctest::Approx(x[i] / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
  }
}

TEST_CASE("batch norm rejects training batches of one") {
  Tape tape;
  BatchNormState state(2);
  CHECK_THROWS_AS(tape.batch_norm(tape.constant(Matrix(1, 2, 1.0)),
                                  tape.constant(Matrix(1, 2, 1.0)),
                                  tape.constant(Matrix(1, 2, 0.0)), state),
                  ContractError);
}

TEST_CASE("batch norm training output has zero mean and unit variance") {
  Rng rng(17);
  BatchNormState state(3);
  state.track_running = false;
  const Matrix x = random_matrix(64, 3, rng, 2.5);
  Tape tape;
  Value out = tape.batch_norm(tape.constant(x), tape.constant(Matrix(1, 3, 1.0)),
                              tape.constant(Matrix(1, 3, 0.0)), state);
  const Matrix& v = tape.value(out);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < v.rows(); ++i) m += v(i, j);
    m /= static_cast<double>(v.rows());
    double var = 0.0;
    for (std::size_t i = 0; i < v.rows(); ++i) var += (v(i, j) - m) * (v(i, j) - m);
    var /= static_cast<double>(v.rows());
    CHECK(std::fabs(m) < 1e-10);
    CHECK(std::fabs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batch norm gradients match finite differences") {
  Rng rng(23);
  const std::size_t n = 8, d = 3;
  const Matrix x = random_matrix(n, d, rng);
  const Matrix y = random_matrix(n, 1, rng);
  Matrix excl(n, d, 0.0);
  for (std::size_t i = 0; i < excl.size(); ++i) excl[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;

  for (const bool use_mask : {false, true}) {
    std::vector<Matrix> params = {Matrix(1, d, 1.0), Matrix(1, d, 0.0),
                                  random_matrix(d, 1, rng, 0.7)};
    auto loss_of = [&](const std::vector<Matrix>& p) {
      BatchNormState st(d);
      st.track_running = false;
      Tape tape;
      Value bn = tape.batch_norm(tape.constant(x), tape.constant(p[0]), tape.constant(p[1]),
                                 st, use_mask ? &excl : nullptr);
      Value out = tape.matmul(bn, tape.constant(p[2]));
      return tape.scalar(tape.mse_loss(out, tape.constant(y)));
    };
    BatchNormState st(d);
    st.track_running = false;
    Tape tape;
    std::vector<Value> vp;
    for (const Matrix& p : params) vp.push_back(tape.input(p, true));
    Value bn = tape.batch_norm(tape.constant(x), vp[0], vp[1], st, use_mask ? &excl : nullptr);
    Value out = tape.matmul(bn, vp[2]);
    Value loss = tape.mse_loss(out, tape.constant(y));
    auto [lv, grads] = forward_backward(tape, loss, vp);
    (void)lv;
    const auto fd = testing::finite_difference_gradients(params, loss_of);
    CHECK(testing::max_gradient_rel_error(grads, fd) < 1e-4);
  }
}

TEST_CASE("cholesky solve identity and diagonal") {
  Rng rng(29);
  const Matrix b = random_matrix(3, 2, rng);
  CHECK(bitwise_equal(cholesky_solve(Matrix::identity(3), b), b));

  const Matrix a = Matrix::of({{4, 0}, {0, 9}});
  const Matrix rhs = Matrix::of({{1}, {1}});
  const Matrix x = cholesky_solve(a, rhs);
  CHECK(x(0, 0) == doctest::Approx(0.25));
  CHECK(x(1, 0) == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("cholesky solve matches Gauss-Jordan oracle") {
  Rng rng(31);
  const Matrix a = random_pd(10, rng);
  const Matrix b = random_matrix(10, 3, rng);
  const Matrix x = cholesky_solve(a, b);
  const Matrix x_ref = matmul(testing::gauss_jordan_inverse(a), b);
  CHECK(max_abs(sub(x, x_ref)) < 1e-8);

  // Residual contract.
  const Matrix resid = sub(matmul(a, x), b);
  CHECK(max_abs(resid) < 1e-8 * max_abs(b));
}

TEST_CASE("cholesky recovers x from A x") {
  Rng rng(37);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix a = random_pd(8, rng, 1.0);
    const Matrix x_true = random_matrix(8, 1, rng);
    const Matrix x = cholesky_solve(a, matmul(a, x_true));
    CHECK(max_abs(sub(x, x_true)) < 1e-8 * std::max(1.0, max_abs(x_true)));
  }
}

TEST_CASE("cholesky rejects non-positive-definite input") {
  const Matrix a = Matrix::of({{1, 2}, {2, 1}});  // indefinite
  CHECK_THROWS_AS(cholesky_factor(a), SingularMatrixError);
}
