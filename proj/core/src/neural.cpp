#include "misshift/neural.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "misshift/adam.hpp"
#include "misshift/errors.hpp"

namespace misshift {

std::string arch_kind_name(ArchKind kind) {
  switch (kind) {
    case ArchKind::kMlp: return "mlp";
    case ArchKind::kNeumiss: return "neumiss";
    case ArchKind::kNeumise: return "neumise";
  }
  return "unknown";
}

ArchKind arch_kind_from_name(const std::string& name) {
  if (name == "mlp") return ArchKind::kMlp;
  if (name == "neumiss") return ArchKind::kNeumiss;
  if (name == "neumise") return ArchKind::kNeumise;
  throw ConfigError("unknown architecture '" + name + "'");
}

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, double sd, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal(0.0, sd);
  return m;
}

Mlp make_mlp(std::size_t input_dim, std::size_t width, std::size_t depth, Rng& rng) {
  Mlp mlp;
  std::size_t in = input_dim;
  for (std::size_t layer = 0; layer < depth; ++layer) {
    mlp.weights.push_back(random_matrix(in, width, std::sqrt(2.0 / static_cast<double>(in)), rng));
    mlp.biases.emplace_back(1, width, 0.0);
    in = width;
  }
  mlp.weights.push_back(random_matrix(in, 1, std::sqrt(1.0 / static_cast<double>(in)), rng));
  mlp.biases.emplace_back(1, 1, 0.0);
  return mlp;
}

}  // namespace

NeuralNet make_network(ArchKind kind, std::size_t input_dim, std::size_t width,
                       std::size_t depth, std::size_t n_blocks, bool bn_observed_stats,
                       Rng& rng) {
  NeuralNet net;
  net.kind = kind;
  net.input_dim = input_dim;
  net.n_blocks = n_blocks;
  net.bn_observed_stats = bn_observed_stats;
  if (kind != ArchKind::kMlp) {
    const std::size_t d = input_dim;
    // The recurrence iterates W, so the spectral radius starts well below 1.
    const double sd = 0.5 / std::sqrt(static_cast<double>(d));
    net.entry = random_matrix(d, d, sd, rng);
    net.recur = random_matrix(d, d, sd, rng);
    if (kind == ArchKind::kNeumiss) {
      net.mu = Matrix(1, d, 0.0);
    } else {
      net.bn_gamma = Matrix(1, d, 1.0);
      net.bn_beta = Matrix(1, d, 0.0);
      net.bn_state = BatchNormState(d);
    }
  }
  net.mlp = make_mlp(input_dim, width, depth, rng);
  return net;
}

void init_centering(NeuralNet& net, const MaskedDataset& train) {
  if (net.kind != ArchKind::kNeumiss) return;
  const std::size_t d = train.dim();
  net.mu = Matrix(1, d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = 0.0, cnt = 0.0;
    for (std::size_t i = 0; i < train.rows(); ++i) {
      if (train.observed(i, j)) {
        acc += train.xtilde(i, j);
        cnt += 1.0;
      }
    }
    net.mu(0, j) = cnt > 0.0 ? acc / cnt : 0.0;
  }
}

Matrix zero_filled(const MaskedDataset& md) {
  Matrix x = md.xtilde;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (is_na(x[i])) x[i] = 0.0;
  }
  return x;
}

std::vector<Matrix*> collect_params(NeuralNet& net) {
  std::vector<Matrix*> params;
  if (net.kind == ArchKind::kNeumiss) {
    params.push_back(&net.mu);
    params.push_back(&net.entry);
    params.push_back(&net.recur);
  } else if (net.kind == ArchKind::kNeumise) {
    params.push_back(&net.bn_gamma);
    params.push_back(&net.bn_beta);
    params.push_back(&net.entry);
    params.push_back(&net.recur);
  }
  for (std::size_t i = 0; i < net.mlp.weights.size(); ++i) {
    params.push_back(&net.mlp.weights[i]);
    params.push_back(&net.mlp.biases[i]);
  }
  return params;
}

namespace {

Value mlp_forward(Tape& tape, const Mlp& mlp, Value h, bool trainable,
                  std::vector<Value>* params) {
  for (std::size_t layer = 0; layer < mlp.weights.size(); ++layer) {
    Value w = tape.input(mlp.weights[layer], trainable);
    Value b = tape.input(mlp.biases[layer], trainable);
    if (params != nullptr) {
      params->push_back(w);
      params->push_back(b);
    }
    h = tape.add(tape.matmul(h, w), b);
    if (layer + 1 < mlp.weights.size()) h = tape.relu(h);
  }
  return h;
}

}  // namespace

ForwardBindings network_embed(Tape& tape, NeuralNet& net, const Matrix& x_batch,
                              const Matrix& mask_batch, bool trainable) {
  ForwardBindings fb;
  Value h;
  if (net.kind == ArchKind::kMlp) {
    if (x_batch.cols() != net.input_dim) {
      throw ShapeError("network_forward: design width does not match the network");
    }
    h = tape.constant(x_batch);
  } else {
    const std::size_t d = net.input_dim;
    if (x_batch.cols() != d || !mask_batch.same_shape(x_batch)) {
      throw ShapeError("network_forward: batch and mask must be n x d");
    }
    Matrix maskbar(mask_batch.rows(), d);
    for (std::size_t i = 0; i < maskbar.size(); ++i) maskbar[i] = 1.0 - mask_batch[i];
    Value x = tape.constant(x_batch);
    Value m = tape.constant(mask_batch);
    Value mbar = tape.constant(std::move(maskbar));

    Value xt;  // centered / normalized zero-filled input
    if (net.kind == ArchKind::kNeumiss) {
      Value mu = tape.input(net.mu, trainable);
      fb.params.push_back(mu);
      Value neg_mu = tape.elemwise_mul(mu, tape.constant(Matrix(1, d, -1.0)));
      xt = tape.elemwise_mul(tape.add(x, neg_mu), mbar);
    } else {
      Value gamma = tape.input(net.bn_gamma, trainable);
      Value beta = tape.input(net.bn_beta, trainable);
      fb.params.push_back(gamma);
      fb.params.push_back(beta);
      xt = tape.batch_norm(x, gamma, beta, net.bn_state,
                           net.bn_observed_stats ? &mask_batch : nullptr);
    }

    Value v = tape.input(net.entry, trainable);
    Value w = tape.input(net.recur, trainable);
    fb.params.push_back(v);
    fb.params.push_back(w);

    // Entry block, then n_blocks shared recurrent blocks. NeuMiss updates
    // the observed coordinates and re-adds the input; the imputation-style
    // variant updates the missing coordinates around the observed input.
    if (net.kind == ArchKind::kNeumiss) {
      Value cur = tape.add(tape.elemwise_mul(tape.matmul(xt, v), mbar), xt);
      for (std::size_t i = 0; i < net.n_blocks; ++i) {
        cur = tape.add(tape.elemwise_mul(tape.matmul(cur, w), mbar), xt);
      }
      h = cur;
    } else {
      Value keep = tape.elemwise_mul(xt, mbar);
      Value cur = tape.add(tape.elemwise_mul(tape.matmul(xt, v), m), keep);
      for (std::size_t i = 0; i < net.n_blocks; ++i) {
        cur = tape.add(tape.elemwise_mul(tape.matmul(cur, w), m), keep);
      }
      h = cur;
    }
  }
  fb.output = h;
  return fb;
}

ForwardBindings network_forward(Tape& tape, NeuralNet& net, const Matrix& x_batch,
                                const Matrix& mask_batch, bool trainable) {
  ForwardBindings fb = network_embed(tape, net, x_batch, mask_batch, trainable);
  fb.output = mlp_forward(tape, net.mlp, fb.output, trainable, &fb.params);
  return fb;
}

std::vector<double> network_predict(const NeuralNet& net, const Matrix& x,
                                    const Matrix& mask) {
  NeuralNet eval_net = net;
  eval_net.bn_state.training = false;
  const std::size_t n = x.rows();
  std::vector<double> out(n);
  const std::size_t chunk = 4096;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    Matrix xb(end - begin, x.cols());
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) xb(i - begin, j) = x(i, j);
    Matrix mb;
    if (!mask.empty()) {
      mb = Matrix(end - begin, mask.cols());
      for (std::size_t i = begin; i < end; ++i)
        for (std::size_t j = 0; j < mask.cols(); ++j) mb(i - begin, j) = mask(i, j);
    }
    Tape tape;
    ForwardBindings fb = network_forward(tape, eval_net, xb, mb, false);
    const Matrix& pred = tape.value(fb.output);
    for (std::size_t i = begin; i < end; ++i) out[i] = pred(i - begin, 0);
  }
  return out;
}

namespace {

double validation_mse(const NeuralNet& net, const std::vector<TrainData>& variants) {
  std::vector<double> avg;
  for (const TrainData& v : variants) {
    const std::vector<double> pred = network_predict(net, v.x, v.mask);
    if (avg.empty()) {
      avg = pred;
    } else {
      for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += pred[i];
    }
  }
  const double scale = 1.0 / static_cast<double>(variants.size());
  const Matrix& y = variants.front().y;
  double acc = 0.0;
  for (std::size_t i = 0; i < avg.size(); ++i) {
    const double d = avg[i] * scale - y(i, 0);
    acc += d * d;
  }
  return acc / static_cast<double>(avg.size());
}

}  // namespace

TrainResult train_network(NeuralNet& net, const TrainData& train,
                          const std::vector<TrainData>& val_variants, const TrainConfig& cfg,
                          Rng& rng) {
  if (cfg.early_stop_patience == 0 || cfg.lr_decay_patience == 0) {
    throw ContractError("train_network: patience values must be positive");
  }
  if (!(cfg.lr_decay_factor > 0.0 && cfg.lr_decay_factor < 1.0)) {
    throw ContractError("train_network: decay factor must lie in (0, 1)");
  }
  if (val_variants.empty()) throw ContractError("train_network: no validation data");

  std::vector<Matrix*> params = collect_params(net);
  std::vector<Matrix> param_shapes;
  param_shapes.reserve(params.size());
  for (Matrix* p : params) param_shapes.push_back(*p);
  AdamState adam(cfg.learning_rate, cfg.weight_decay, param_shapes);

  const std::size_t n = train.x.rows();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TrainResult result;
  result.best_val_mse = std::numeric_limits<double>::infinity();
  NeuralNet best = net;
  std::size_t stagnant = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      if (end - begin < 2) continue;  // batch statistics need two rows
      Matrix xb(end - begin, train.x.cols());
      Matrix yb(end - begin, 1);
      Matrix mb;
      if (!train.mask.empty()) mb = Matrix(end - begin, train.mask.cols());
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t src = order[i];
        for (std::size_t j = 0; j < train.x.cols(); ++j) xb(i - begin, j) = train.x(src, j);
        if (!mb.empty())
          for (std::size_t j = 0; j < train.mask.cols(); ++j) mb(i - begin, j) = train.mask(src, j);
        yb(i - begin, 0) = train.y(src, 0);
      }

      Tape tape;
      ForwardBindings fb = network_forward(tape, net, xb, mb, true);
      Value loss = tape.mse_loss(fb.output, tape.constant(std::move(yb)));
      auto [loss_value, grads] = forward_backward(tape, loss, fb.params);
      if (!std::isfinite(loss_value)) {
        throw DivergenceError("train_network: non-finite training loss",
                              static_cast<long>(epoch));
      }
      try {
        adam_step(adam, params, grads);
      } catch (const DivergenceError& e) {
        throw DivergenceError(e.what(), static_cast<long>(epoch));
      }
    }

    const double val = validation_mse(net, val_variants);
    result.val_history.push_back(val);
    result.epochs_run = epoch;
    if (!std::isfinite(val)) {
      throw DivergenceError("train_network: non-finite validation loss",
                            static_cast<long>(epoch));
    }
    if (val < result.best_val_mse) {
      result.best_val_mse = val;
      best = net;
      stagnant = 0;
    } else {
      ++stagnant;
      if (stagnant == cfg.lr_decay_patience) {
        adam.learning_rate *= cfg.lr_decay_factor;
        ++result.lr_decays;
      }
      if (stagnant >= cfg.early_stop_patience) break;
    }
  }
  net = best;
  return result;
}

GridChoice grid_search(const GridSpace& space, const TrainConfig& base,
                       const GridEvaluator& evaluate, std::size_t reps, Rng& rng) {
  if (space.learning_rates.empty() || space.weight_decays.empty() || space.widths.empty() ||
      space.depths.empty()) {
    throw ContractError("grid_search: empty search space");
  }
  if (reps < 1) throw ContractError("grid_search: reps must be at least 1");

  std::vector<std::uint64_t> seeds(reps);
  for (std::size_t r = 0; r < reps; ++r) seeds[r] = rng.fork("grid-rep-" + std::to_string(r)).seed();

  GridChoice bestc;
  bool have = false;
  for (double lr : space.learning_rates) {
    for (double wd : space.weight_decays) {
      for (std::size_t width : space.widths) {
        for (std::size_t depth : space.depths) {
          TrainConfig cfg = base;
          cfg.learning_rate = lr;
          cfg.weight_decay = wd;
          double acc = 0.0;
          for (std::size_t r = 0; r < reps; ++r) {
            double v;
            try {
              v = evaluate(cfg, width, depth, seeds[r]);
            } catch (const DivergenceError&) {
              v = std::numeric_limits<double>::infinity();
            }
            acc += std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
          }
          const double mean = acc / static_cast<double>(reps);
          const bool better =
              !have || mean < bestc.mean_val_mse ||
              (mean == bestc.mean_val_mse &&
               (width < bestc.width || (width == bestc.width && depth < bestc.depth)));
          if (better) {
            bestc.train = cfg;
            bestc.width = width;
            bestc.depth = depth;
            bestc.mean_val_mse = mean;
            have = true;
          }
        }
      }
    }
  }
  return bestc;
}

}  // namespace misshift
