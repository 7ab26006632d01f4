#pragma once

#include <vector>

#include "misshift/matrix.hpp"

namespace misshift {

// Adam with bias correction and decoupled weight decay. The decay is applied
// directly to the parameter, not through the gradient moments.
struct AdamState {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;

  AdamState() = default;
  AdamState(double lr, double wd, const std::vector<Matrix>& params);
};

// One update over all parameters. Throws DivergenceError on a non-finite
// gradient; shapes are checked against the state's accumulators.
void adam_step(AdamState& state, std::vector<Matrix>& params,
               const std::vector<Matrix>& grads);

// In-place variant for parameters living inside a model struct.
void adam_step(AdamState& state, const std::vector<Matrix*>& params,
               const std::vector<Matrix>& grads);

}  // namespace misshift
