#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "misshift/matrix.hpp"

namespace misshift {

// Batch-norm side state. The learnable affine parameters live on the tape
// (they are differentiated); everything here persists across minibatches.
struct BatchNormState {
  Matrix running_mean;  // 1 x d
  Matrix running_var;   // 1 x d
  double eps = 1e-5;
  double momentum = 0.1;
  bool training = true;
  // Gradient checks re-run the forward pass; they freeze the running
  // statistics so the graph stays a pure function of its inputs.
  bool track_running = true;

  explicit BatchNormState(std::size_t d = 0)
      : running_mean(1, d, 0.0), running_var(1, d, 1.0) {}
};

enum class Op : std::uint8_t {
  kInput,
  kMatmul,
  kAdd,
  kElemwiseMul,
  kSigmoid,
  kRelu,
  kBatchNorm,
  kMseLoss,
  kGaussianCdf,
  kSlice,
  kConcat,
};

struct Value {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Define-by-run reverse-mode tape. Values are computed eagerly as nodes are
// created, so creation order is a topological order and the backward pass is
// a single reverse sweep. A tape is built per minibatch and discarded.
class Tape {
 public:
  Value input(Matrix value, bool requires_grad);
  Value constant(Matrix value) { return input(std::move(value), false); }

  Value matmul(Value a, Value b);
  // Same-shape add, or broadcast of a 1 x c row across an n x c matrix.
  Value add(Value a, Value b);
  Value elemwise_mul(Value a, Value b);
  Value sigmoid(Value a);
  Value relu(Value a);
  Value gaussian_cdf(Value a);
  Value slice_cols(Value a, std::size_t c0, std::size_t c1);
  Value concat_cols(Value a, Value b);
  Value mse_loss(Value pred, Value target);
  // Per-feature batch normalization with learnable affine (gamma, beta).
  // When exclude_mask is non-null (1 = excluded), excluded cells contribute
  // nothing to the batch statistics and their outputs are forced to zero.
  Value batch_norm(Value x, Value gamma, Value beta, BatchNormState& state,
                   const Matrix* exclude_mask = nullptr);

  const Matrix& value(Value v) const;
  double scalar(Value v) const;
  const Matrix& adjoint(Value v) const;

  // Seeds the scalar loss with adjoint 1 and sweeps the tape in reverse
  // topological order, visiting each node exactly once.
  void backward(Value loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    bool requires_grad = false;
    Matrix value;
    Matrix adjoint;
    Matrix cache0, cache1, cache2;
    std::size_t i0 = 0, i1 = 0;
    BatchNormState* bn = nullptr;
  };

  int push(Node n);
  Node& at(Value v);
  const Node& at(Value v) const;
  void accumulate(int idx, const Matrix& g);

  std::vector<Node> nodes_;
};

// Runs the backward pass for a scalar loss and collects the gradient of
// every listed parameter (parameters must be requires_grad inputs).
// Returns the loss value and one gradient matrix per parameter.
std::pair<double, std::vector<Matrix>> forward_backward(Tape& tape, Value loss,
                                                        const std::vector<Value>& params);

}  // namespace misshift
