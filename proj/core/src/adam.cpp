#include "misshift/adam.hpp"

#include <cmath>
#include <string>

#include "misshift/errors.hpp"

namespace misshift {

AdamState::AdamState(double lr, double wd, const std::vector<Matrix>& params)
    : learning_rate(lr), weight_decay(wd) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const Matrix& p : params) {
    first_moment.emplace_back(p.rows(), p.cols(), 0.0);
    second_moment.emplace_back(p.rows(), p.cols(), 0.0);
  }
}

void adam_step(AdamState& state, std::vector<Matrix>& params,
               const std::vector<Matrix>& grads) {
  std::vector<Matrix*> ptrs(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) ptrs[i] = &params[i];
  adam_step(state, ptrs, grads);
}

void adam_step(AdamState& state, const std::vector<Matrix*>& params,
               const std::vector<Matrix>& grads) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = grads[k];
    Matrix& m = state.first_moment[k];
    Matrix& v = state.second_moment[k];
    if (!p.same_shape(g) || !p.same_shape(m)) {
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(k));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      if (!std::isfinite(gi)) {
        throw DivergenceError("adam_step: non-finite gradient at parameter " +
                              std::to_string(k));
      }
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= state.learning_rate *
              (mhat / (std::sqrt(vhat) + state.eps) + state.weight_decay * p[i]);
    }
  }
}

}  // namespace misshift
