#include "misshift/autodiff.hpp"

#include <cmath>
#include <string>

#include "misshift/errors.hpp"
#include "misshift/mathfn.hpp"

namespace misshift {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tape::Node& Tape::at(Value v) { return nodes_[static_cast<std::size_t>(v.idx)]; }
const Tape::Node& Tape::at(Value v) const { return nodes_[static_cast<std::size_t>(v.idx)]; }

const Matrix& Tape::value(Value v) const { return at(v).value; }

double Tape::scalar(Value v) const {
  const Matrix& m = at(v).value;
  require(m.rows() == 1 && m.cols() == 1, "scalar: value is not 1x1");
  return m(0, 0);
}

const Matrix& Tape::adjoint(Value v) const { return at(v).adjoint; }

Value Tape::input(Matrix value, bool requires_grad) {
  Node n;
  n.op = Op::kInput;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  return Value{push(std::move(n))};
}

Value Tape::matmul(Value a, Value b) {
  const Node& na = at(a);
  const Node& nb = at(b);
  Node n;
  n.op = Op::kMatmul;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = misshift::matmul(na.value, nb.value);
  return Value{push(std::move(n))};
}

Value Tape::add(Value a, Value b) {
  const Matrix& va = at(a).value;
  const Matrix& vb = at(b).value;
  Node n;
  n.op = Op::kAdd;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  if (va.same_shape(vb)) {
    n.value = misshift::add(va, vb);
  } else if (vb.rows() == 1 && vb.cols() == va.cols()) {
    Matrix out = va;
    for (std::size_t i = 0; i < va.rows(); ++i)
      for (std::size_t j = 0; j < va.cols(); ++j) out(i, j) += vb(0, j);
    n.value = std::move(out);
  } else if (va.rows() == 1 && va.cols() == vb.cols()) {
    Matrix out = vb;
    for (std::size_t i = 0; i < vb.rows(); ++i)
      for (std::size_t j = 0; j < vb.cols(); ++j) out(i, j) += va(0, j);
    n.value = std::move(out);
  } else {
    throw ShapeError("add: shapes must match or broadcast a 1 x c row");
  }
  return Value{push(std::move(n))};
}

Value Tape::elemwise_mul(Value a, Value b) {
  Node n;
  n.op = Op::kElemwiseMul;
  n.a = a.idx;
  n.b = b.idx;
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.value = hadamard(at(a).value, at(b).value);
  return Value{push(std::move(n))};
}

Value Tape::sigmoid(Value a) {
  Node n;
  n.op = Op::kSigmoid;
  n.a = a.idx;
  n.requires_grad = at(a).requires_grad;
  Matrix out = at(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = misshift::sigmoid(out[i]);
  n.value = std::move(out);
  return Value{push(std::move(n))};
}

Value Tape::relu(Value a) {
  Node n;
  n.op = Op::kRelu;
  n.a = a.idx;
  n.requires_grad = at(a).requires_grad;
  Matrix out = at(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  n.value = std::move(out);
  return Value{push(std::move(n))};
}

Value Tape::gaussian_cdf(Value a) {
  Node n;
  n.op = Op::kGaussianCdf;
  n.a = a.idx;
  n.requires_grad = at(a).requires_grad;
  Matrix out = at(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = normal_cdf(out[i]);
  n.value = std::move(out);
  return Value{push(std::move(n))};
}

Value Tape::slice_cols(Value a, std::size_t c0, std::size_t c1) {
  const Matrix& va = at(a).value;
  require(c0 < c1 && c1 <= va.cols(), "slice_cols: column range out of bounds");
  Node n;
  n.op = Op::kSlice;
  n.a = a.idx;
  n.i0 = c0;
  n.i1 = c1;
  n.requires_grad = at(a).requires_grad;
  Matrix out(va.rows(), c1 - c0);
  for (std::size_t i = 0; i < va.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = va(i, j);
  n.value = std::move(out);
  return Value{push(std::move(n))};
}

Value Tape::concat_cols(Value a, Value b) {
  Node n;
  n.op = Op::kConcat;
  n.a = a.idx;
  n.b = b.idx;
  n.i0 = at(a).value.cols();
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.value = hcat(at(a).value, at(b).value);
  return Value{push(std::move(n))};
}

Value Tape::mse_loss(Value pred, Value target) {
  const Matrix& p = at(pred).value;
  const Matrix& t = at(target).value;
  require(p.same_shape(t), "mse_loss: prediction and target shapes differ");
  require(p.size() > 0, "mse_loss: empty input");
  Node n;
  n.op = Op::kMseLoss;
  n.a = pred.idx;
  n.b = target.idx;
  n.requires_grad = at(pred).requires_grad || at(target).requires_grad;
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double d = p[i] - t[i];
    acc += d * d;
  }
  n.value = Matrix(1, 1, acc / static_cast<double>(p.size()));
  return Value{push(std::move(n))};
}

Value Tape::batch_norm(Value x, Value gamma, Value beta, BatchNormState& state,
                       const Matrix* exclude_mask) {
  const Matrix& vx = at(x).value;
  const std::size_t n = vx.rows(), d = vx.cols();
  require(at(gamma).value.rows() == 1 && at(gamma).value.cols() == d,
          "batch_norm: gamma must be 1 x d");
  require(at(beta).value.rows() == 1 && at(beta).value.cols() == d,
          "batch_norm: beta must be 1 x d");
  require(state.running_mean.cols() == d, "batch_norm: state dimension mismatch");
  if (exclude_mask != nullptr) {
    require(exclude_mask->same_shape(vx), "batch_norm: mask shape mismatch");
  }
  if (state.training && n < 2) {
    throw ContractError("batch_norm: training mode needs a batch of at least 2 rows");
  }

  Node node;
  node.op = Op::kBatchNorm;
  node.a = x.idx;
  node.b = gamma.idx;
  node.c = beta.idx;
  node.bn = &state;
  node.requires_grad = at(x).requires_grad || at(gamma).requires_grad || at(beta).requires_grad;
  if (exclude_mask != nullptr) node.cache2 = *exclude_mask;

  const Matrix& g = at(gamma).value;
  const Matrix& b = at(beta).value;
  Matrix xhat(n, d, 0.0);
  Matrix invstd(1, d, 0.0);
  Matrix counts(1, d, 0.0);
  Matrix out(n, d, 0.0);

  auto included = [&](std::size_t i, std::size_t j) {
    return exclude_mask == nullptr || (*exclude_mask)(i, j) == 0.0;
  };

  if (state.training) {
    for (std::size_t j = 0; j < d; ++j) {
      double cnt = 0.0, mean = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (included(i, j)) {
          mean += vx(i, j);
          cnt += 1.0;
        }
      double var = 1.0;
      if (cnt > 0.0) {
        mean /= cnt;
        var = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          if (included(i, j)) {
            double dlt = vx(i, j) - mean;
            var += dlt * dlt;
          }
        var /= cnt;
      } else {
        mean = 0.0;
      }
      double is = 1.0 / std::sqrt(var + state.eps);
      invstd(0, j) = is;
      counts(0, j) = cnt;
      for (std::size_t i = 0; i < n; ++i) {
        if (!included(i, j)) continue;
        double xh = (vx(i, j) - mean) * is;
        xhat(i, j) = xh;
        out(i, j) = g(0, j) * xh + b(0, j);
      }
      if (state.track_running && cnt > 0.0) {
        state.running_mean(0, j) =
            (1.0 - state.momentum) * state.running_mean(0, j) + state.momentum * mean;
        state.running_var(0, j) =
            (1.0 - state.momentum) * state.running_var(0, j) + state.momentum * var;
      }
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) {
      double is = 1.0 / std::sqrt(state.running_var(0, j) + state.eps);
      invstd(0, j) = is;
      for (std::size_t i = 0; i < n; ++i) {
        if (!included(i, j)) continue;
        double xh = (vx(i, j) - state.running_mean(0, j)) * is;
        xhat(i, j) = xh;
        out(i, j) = g(0, j) * xh + b(0, j);
        counts(0, j) += 1.0;
      }
    }
  }
  node.cache0 = std::move(xhat);
  node.cache1 = hcat(invstd, counts);  // 1 x 2d
  // Eval mode normalizes with frozen statistics, so the backward pass must
  // not apply the batch-coupled correction terms.
  node.i0 = state.training ? 1 : 0;
  node.value = std::move(out);
  return Value{push(std::move(node))};
}

void Tape::accumulate(int idx, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(idx)];
  if (!n.requires_grad) return;
  if (n.adjoint.empty()) {
    n.adjoint = Matrix(n.value.rows(), n.value.cols());
  }
  add_in_place(n.adjoint, g);
}

void Tape::backward(Value loss) {
  Node& ln = at(loss);
  if (ln.value.rows() != 1 || ln.value.cols() != 1) {
    throw ContractError("backward: loss must be a 1x1 scalar node");
  }
  if (!ln.requires_grad) return;
  ln.adjoint = Matrix(1, 1, 1.0);

  for (int idx = loss.idx; idx >= 0; --idx) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.requires_grad || n.adjoint.empty()) continue;
    const Matrix& dy = n.adjoint;
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kMatmul: {
        const Node& na = nodes_[static_cast<std::size_t>(n.a)];
        const Node& nb = nodes_[static_cast<std::size_t>(n.b)];
        if (na.requires_grad) accumulate(n.a, matmul_nt(dy, nb.value));
        if (nb.requires_grad) accumulate(n.b, matmul_tn(na.value, dy));
        break;
      }
      case Op::kAdd: {
        const Node& na = nodes_[static_cast<std::size_t>(n.a)];
        const Node& nb = nodes_[static_cast<std::size_t>(n.b)];
        auto reduce_to = [&](const Matrix& shape_like) {
          if (shape_like.same_shape(dy)) return dy;
          Matrix r(1, dy.cols(), 0.0);
          for (std::size_t i = 0; i < dy.rows(); ++i)
            for (std::size_t j = 0; j < dy.cols(); ++j) r(0, j) += dy(i, j);
          return r;
        };
        if (na.requires_grad) accumulate(n.a, reduce_to(na.value));
        if (nb.requires_grad) accumulate(n.b, reduce_to(nb.value));
        break;
      }
      case Op::kElemwiseMul: {
        const Node& na = nodes_[static_cast<std::size_t>(n.a)];
        const Node& nb = nodes_[static_cast<std::size_t>(n.b)];
        if (na.requires_grad) accumulate(n.a, hadamard(dy, nb.value));
        if (nb.requires_grad) accumulate(n.b, hadamard(dy, na.value));
        break;
      }
      case Op::kSigmoid: {
        Matrix g = dy;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= n.value[i] * (1.0 - n.value[i]);
        accumulate(n.a, g);
        break;
      }
      case Op::kRelu: {
        const Matrix& x = nodes_[static_cast<std::size_t>(n.a)].value;
        Matrix g = dy;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] <= 0.0) g[i] = 0.0;
        accumulate(n.a, g);
        break;
      }
      case Op::kGaussianCdf: {
        const Matrix& x = nodes_[static_cast<std::size_t>(n.a)].value;
        Matrix g = dy;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= normal_pdf(x[i]);
        accumulate(n.a, g);
        break;
      }
      case Op::kSlice: {
        const Node& na = nodes_[static_cast<std::size_t>(n.a)];
        if (na.requires_grad) {
          Matrix g(na.value.rows(), na.value.cols(), 0.0);
          for (std::size_t i = 0; i < dy.rows(); ++i)
            for (std::size_t j = 0; j < dy.cols(); ++j) g(i, j + n.i0) = dy(i, j);
          accumulate(n.a, g);
        }
        break;
      }
      case Op::kConcat: {
        const Node& na = nodes_[static_cast<std::size_t>(n.a)];
        const Node& nb = nodes_[static_cast<std::size_t>(n.b)];
        if (na.requires_grad) {
          Matrix g(na.value.rows(), na.value.cols());
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) = dy(i, j);
          accumulate(n.a, g);
        }
        if (nb.requires_grad) {
          Matrix g(nb.value.rows(), nb.value.cols());
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) = dy(i, j + n.i0);
          accumulate(n.b, g);
        }
        break;
      }
      case Op::kMseLoss: {
        const Node& na = nodes_[static_cast<std::size_t>(n.a)];
        const Node& nb = nodes_[static_cast<std::size_t>(n.b)];
        const double coef = 2.0 * dy(0, 0) / static_cast<double>(na.value.size());
        Matrix g = na.value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = coef * (na.value[i] - nb.value[i]);
        if (na.requires_grad) accumulate(n.a, g);
        if (nb.requires_grad) accumulate(n.b, scale(g, -1.0));
        break;
      }
      case Op::kBatchNorm: {
        const Node& nx = nodes_[static_cast<std::size_t>(n.a)];
        const Node& ng = nodes_[static_cast<std::size_t>(n.b)];
        const Node& nb2 = nodes_[static_cast<std::size_t>(n.c)];
        const std::size_t rows = n.value.rows(), d = n.value.cols();
        const Matrix& xhat = n.cache0;
        const Matrix* mask = n.cache2.empty() ? nullptr : &n.cache2;
        auto included = [&](std::size_t i, std::size_t j) {
          return mask == nullptr || (*mask)(i, j) == 0.0;
        };
        const bool train_stats = n.i0 == 1;

        if (ng.requires_grad) {
          Matrix dgamma(1, d, 0.0);
          for (std::size_t j = 0; j < d; ++j)
            for (std::size_t i = 0; i < rows; ++i)
              if (included(i, j)) dgamma(0, j) += dy(i, j) * xhat(i, j);
          accumulate(n.b, dgamma);
        }
        if (nb2.requires_grad) {
          Matrix dbeta(1, d, 0.0);
          for (std::size_t j = 0; j < d; ++j)
            for (std::size_t i = 0; i < rows; ++i)
              if (included(i, j)) dbeta(0, j) += dy(i, j);
          accumulate(n.c, dbeta);
        }
        if (nx.requires_grad) {
          Matrix dx(rows, d, 0.0);
          for (std::size_t j = 0; j < d; ++j) {
            const double is = n.cache1(0, j);
            const double cnt = n.cache1(0, d + j);
            const double gj = ng.value(0, j);
            if (cnt == 0.0) continue;
            if (!train_stats) {
              for (std::size_t i = 0; i < rows; ++i)
                if (included(i, j)) dx(i, j) = dy(i, j) * gj * is;
              continue;
            }
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < rows; ++i)
              if (included(i, j)) {
                sum_dy += dy(i, j);
                sum_dy_xhat += dy(i, j) * xhat(i, j);
              }
            for (std::size_t i = 0; i < rows; ++i) {
              if (!included(i, j)) continue;
              dx(i, j) = gj * is / cnt *
                         (cnt * dy(i, j) - sum_dy - xhat(i, j) * sum_dy_xhat);
            }
          }
          accumulate(n.a, dx);
        }
        break;
      }
    }
  }
}

std::pair<double, std::vector<Matrix>> forward_backward(Tape& tape, Value loss,
                                                        const std::vector<Value>& params) {
  const double loss_value = tape.scalar(loss);
  tape.backward(loss);
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (Value p : params) {
    const Matrix& adj = tape.adjoint(p);
    if (adj.empty()) {
      const Matrix& v = tape.value(p);
      grads.emplace_back(v.rows(), v.cols(), 0.0);
    } else {
      grads.push_back(adj);
    }
  }
  return {loss_value, std::move(grads)};
}

}  // namespace misshift
