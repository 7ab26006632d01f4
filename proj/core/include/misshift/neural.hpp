#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "misshift/autodiff.hpp"
#include "misshift/matrix.hpp"
#include "misshift/missingness.hpp"
#include "misshift/rng.hpp"

namespace misshift {

enum class ArchKind { kMlp, kNeumiss, kNeumise };

std::string arch_kind_name(ArchKind kind);
ArchKind arch_kind_from_name(const std::string& name);

struct Mlp {
  std::vector<Matrix> weights;  // layer i: in x out
  std::vector<Matrix> biases;   // 1 x out
};

// Predictor with an optional recurrent masking embedding in front of the
// feed-forward head. The two embedding kinds differ only in which
// coordinates the recurrent update writes: the observed ones (so the
// embedding accumulates a truncated Neumann series of the observed-block
// inverse) or the missing ones (so it behaves like iterative imputation and
// passes fully observed rows through unchanged).
struct NeuralNet {
  ArchKind kind = ArchKind::kMlp;
  std::size_t input_dim = 0;
  std::size_t n_blocks = 0;
  bool bn_observed_stats = true;  // exclude masked cells from batch statistics
  Matrix mu;                      // 1 x d learned centering (neumiss)
  Matrix entry;                   // V, d x d
  Matrix recur;                   // W, d x d
  Matrix bn_gamma, bn_beta;       // 1 x d (neumise)
  BatchNormState bn_state;
  Mlp mlp;
};

NeuralNet make_network(ArchKind kind, std::size_t input_dim, std::size_t width,
                       std::size_t depth, std::size_t n_blocks, bool bn_observed_stats,
                       Rng& rng);

// Initializes the learned centering to the column means of observed entries.
void init_centering(NeuralNet& net, const MaskedDataset& train);

// Raw values with NA cells replaced by zero.
Matrix zero_filled(const MaskedDataset& md);

struct ForwardBindings {
  std::vector<Value> params;  // fixed order, matching collect_params
  Value output;
};

std::vector<Matrix*> collect_params(NeuralNet& net);

// Embedding part only: normalization plus the recurrent blocks (identity for
// pure MLP inputs). output is the embedded batch fed to the head.
ForwardBindings network_embed(Tape& tape, NeuralNet& net, const Matrix& x_batch,
                              const Matrix& mask_batch, bool trainable);

// Builds the forward graph for one batch. mask may be empty for pure MLP
// inputs. When trainable, parameters are bound as gradient-carrying inputs.
ForwardBindings network_forward(Tape& tape, NeuralNet& net, const Matrix& x_batch,
                                const Matrix& mask_batch, bool trainable);

// Eval-mode predictions (frozen normalization statistics), in batches.
std::vector<double> network_predict(const NeuralNet& net, const Matrix& x,
                                    const Matrix& mask);

struct TrainConfig {
  double learning_rate = 5e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 100;
  std::size_t max_epochs = 1000;
  std::size_t early_stop_patience = 12;
  std::size_t lr_decay_patience = 10;
  double lr_decay_factor = 0.2;
  std::uint64_t seed = 0;
};

struct TrainData {
  Matrix x;     // n x input_dim
  Matrix mask;  // n x d for embeddings, empty otherwise
  Matrix y;     // n x 1
};

struct TrainResult {
  double best_val_mse = 0.0;
  std::size_t epochs_run = 0;
  std::size_t lr_decays = 0;
  std::vector<double> val_history;
};

// Adam minibatch training on MSE. After each epoch the validation MSE is
// evaluated (averaged over the given variants when an imputer produced
// several completions); the best-validation weights are restored at the
// end. The learning rate decays after lr_decay_patience stagnant epochs and
// training stops after early_stop_patience stagnant epochs. Throws
// DivergenceError (with the epoch) on non-finite losses or gradients.
TrainResult train_network(NeuralNet& net, const TrainData& train,
                          const std::vector<TrainData>& val_variants, const TrainConfig& cfg,
                          Rng& rng);

struct GridSpace {
  std::vector<double> learning_rates{1e-2, 5e-3, 1e-3};
  std::vector<double> weight_decays{1e-5, 1e-4, 1e-3};
  std::vector<std::size_t> widths{50, 250, 500};
  std::vector<std::size_t> depths{1, 2, 5};
};

struct GridChoice {
  TrainConfig train;
  std::size_t width = 0;
  std::size_t depth = 0;
  double mean_val_mse = 0.0;
};

// Evaluates one grid point for one repetition seed; returns validation MSE.
using GridEvaluator = std::function<double(const TrainConfig&, std::size_t width,
                                           std::size_t depth, std::uint64_t seed)>;

// Exhaustive search over the space, selecting the lowest mean validation MSE
// over reps repetitions; ties break toward smaller width, then depth.
// Diverging points count as +infinity rather than erroring.
GridChoice grid_search(const GridSpace& space, const TrainConfig& base,
                       const GridEvaluator& evaluate, std::size_t reps, Rng& rng);

}  // namespace misshift
