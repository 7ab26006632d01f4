#include "misshift/estimator.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "misshift/analytic.hpp"
#include "misshift/errors.hpp"
#include "misshift/imputers.hpp"
#include "misshift/io.hpp"
#include "misshift/neural.hpp"

namespace misshift {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Serialization helpers
// ---------------------------------------------------------------------------

void put_network(Container& c, const std::string& prefix, const NeuralNet& net) {
  json meta;
  meta["kind"] = arch_kind_name(net.kind);
  meta["input_dim"] = net.input_dim;
  meta["n_blocks"] = net.n_blocks;
  meta["bn_observed_stats"] = net.bn_observed_stats;
  meta["layers"] = net.mlp.weights.size();
  meta["bn_eps"] = net.bn_state.eps;
  meta["bn_momentum"] = net.bn_state.momentum;
  c.put_bytes(prefix + "meta", meta.dump());
  if (net.kind != ArchKind::kMlp) {
    c.put_matrix(prefix + "entry", net.entry);
    c.put_matrix(prefix + "recur", net.recur);
  }
  if (net.kind == ArchKind::kNeumiss) c.put_matrix(prefix + "mu", net.mu);
  if (net.kind == ArchKind::kNeumise) {
    c.put_matrix(prefix + "bn_gamma", net.bn_gamma);
    c.put_matrix(prefix + "bn_beta", net.bn_beta);
    c.put_matrix(prefix + "bn_rmean", net.bn_state.running_mean);
    c.put_matrix(prefix + "bn_rvar", net.bn_state.running_var);
  }
  for (std::size_t i = 0; i < net.mlp.weights.size(); ++i) {
    c.put_matrix(prefix + "w" + std::to_string(i), net.mlp.weights[i]);
    c.put_matrix(prefix + "b" + std::to_string(i), net.mlp.biases[i]);
  }
}

NeuralNet get_network(const Container& c, const std::string& prefix) {
  NeuralNet net;
  const json meta = json::parse(c.bytes(prefix + "meta"));
  net.kind = arch_kind_from_name(meta.at("kind").get<std::string>());
  net.input_dim = meta.at("input_dim").get<std::size_t>();
  net.n_blocks = meta.at("n_blocks").get<std::size_t>();
  net.bn_observed_stats = meta.at("bn_observed_stats").get<bool>();
  if (net.kind != ArchKind::kMlp) {
    net.entry = c.matrix(prefix + "entry");
    net.recur = c.matrix(prefix + "recur");
  }
  if (net.kind == ArchKind::kNeumiss) net.mu = c.matrix(prefix + "mu");
  if (net.kind == ArchKind::kNeumise) {
    net.bn_gamma = c.matrix(prefix + "bn_gamma");
    net.bn_beta = c.matrix(prefix + "bn_beta");
    net.bn_state = BatchNormState(net.input_dim);
    net.bn_state.running_mean = c.matrix(prefix + "bn_rmean");
    net.bn_state.running_var = c.matrix(prefix + "bn_rvar");
    net.bn_state.eps = meta.at("bn_eps").get<double>();
    net.bn_state.momentum = meta.at("bn_momentum").get<double>();
  }
  const auto layers = meta.at("layers").get<std::size_t>();
  for (std::size_t i = 0; i < layers; ++i) {
    net.mlp.weights.push_back(c.matrix(prefix + "w" + std::to_string(i)));
    net.mlp.biases.push_back(c.matrix(prefix + "b" + std::to_string(i)));
  }
  return net;
}

void put_ice_model(Container& c, const std::string& prefix, const IceModel& model) {
  json meta;
  meta["dim"] = model.dim;
  meta["n_iter"] = model.n_iter;
  meta["alpha"] = model.alpha;
  meta["use_mask"] = model.flags.use_mask;
  meta["use_y"] = model.flags.use_y;
  meta["probabilistic"] = model.flags.probabilistic;
  meta["fit_all_columns"] = model.flags.fit_all_columns;
  json cols = json::array();
  json noise = json::array();
  for (const IceColumnModel& cm : model.columns) {
    cols.push_back(cm.column);
    noise.push_back(cm.posterior.noise_var);
  }
  meta["columns"] = std::move(cols);
  meta["noise_vars"] = std::move(noise);
  c.put_bytes(prefix + "meta", meta.dump());
  c.put_matrix(prefix + "means", Matrix::column(model.column_means));
  for (std::size_t k = 0; k < model.columns.size(); ++k) {
    const std::string base = prefix + "col" + std::to_string(k) + "/";
    c.put_matrix(base + "mean", Matrix::column(model.columns[k].posterior.mean));
    c.put_matrix(base + "cov", model.columns[k].posterior.cov);
  }
}

IceModel get_ice_model(const Container& c, const std::string& prefix) {
  IceModel model;
  const json meta = json::parse(c.bytes(prefix + "meta"));
  model.dim = meta.at("dim").get<std::size_t>();
  model.n_iter = meta.at("n_iter").get<std::size_t>();
  model.alpha = meta.at("alpha").get<double>();
  model.flags.use_mask = meta.at("use_mask").get<bool>();
  model.flags.use_y = meta.at("use_y").get<bool>();
  model.flags.probabilistic = meta.at("probabilistic").get<bool>();
  model.flags.fit_all_columns = meta.at("fit_all_columns").get<bool>();
  const Matrix& means = c.matrix(prefix + "means");
  model.column_means.assign(means.data(), means.data() + means.size());
  const auto cols = meta.at("columns").get<std::vector<std::size_t>>();
  const auto noise = meta.at("noise_vars").get<std::vector<double>>();
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const std::string base = prefix + "col" + std::to_string(k) + "/";
    IceColumnModel cm;
    cm.column = cols[k];
    const Matrix& mean = c.matrix(base + "mean");
    cm.posterior.mean.assign(mean.data(), mean.data() + mean.size());
    cm.posterior.cov = c.matrix(base + "cov");
    cm.posterior.noise_var = noise[k];
    cm.posterior.alpha = model.alpha;
    model.columns.push_back(std::move(cm));
  }
  return model;
}

json selfmask_to_json(const SelfMaskParams& sm) {
  json j;
  j["tilt"] = sm.tilt;
  j["amplitude"] = sm.amplitude;
  j["mu_tilde"] = sm.mu_tilde;
  j["sigma_tilde"] = sm.sigma_tilde;
  return j;
}

SelfMaskParams selfmask_from_json(const json& j) {
  SelfMaskParams sm;
  sm.tilt = j.at("tilt").get<double>();
  sm.amplitude = j.at("amplitude").get<std::vector<double>>();
  sm.mu_tilde = j.at("mu_tilde").get<std::vector<double>>();
  sm.sigma_tilde = j.at("sigma_tilde").get<std::vector<double>>();
  return sm;
}

Matrix column_matrix(const std::vector<double>& v) { return Matrix(v.size(), 1, v); }

// ---------------------------------------------------------------------------
// Analytic estimators
// ---------------------------------------------------------------------------

class AnalyticFamilyEstimator : public Estimator {
 public:
  enum class Mode { kBayes, kCondOracle, kProbOracle };

  AnalyticFamilyEstimator(Mode mode, GaussianParams gp, OutcomeParams op,
                          std::optional<SelfMaskParams> sm, std::size_t n_draws,
                          std::uint64_t draw_seed)
      : mode_(mode),
        n_draws_(n_draws),
        draw_seed_(draw_seed),
        selfmask_(sm),
        engine_(std::move(gp), std::move(op), std::move(sm)) {}

  std::string name() const override {
    switch (mode_) {
      case Mode::kBayes: return "bayes";
      case Mode::kCondOracle: return "cond_oracle";
      case Mode::kProbOracle: return "prob_oracle";
    }
    return "analytic";
  }

  std::vector<double> predict(const MaskedDataset& md) const override {
    std::vector<double> out(md.rows());
    Rng rng(draw_seed_);
    for (std::size_t i = 0; i < md.rows(); ++i) {
      const std::vector<double> row = masked_row(md, i);
      switch (mode_) {
        case Mode::kBayes: out[i] = engine_.bayes(row); break;
        case Mode::kCondOracle: out[i] = engine_.cond_oracle(row); break;
        case Mode::kProbOracle: out[i] = engine_.prob_oracle(row, n_draws_, rng); break;
      }
    }
    return out;
  }

  void save(const std::string& path) const override { to_container().write_file(path); }
  std::uint64_t state_hash() const override { return to_container().content_hash(); }

 private:
  Container to_container() const {
    Container c;
    json meta;
    meta["type"] = "analytic";
    meta["mode"] = name();
    meta["n_draws"] = n_draws_;
    meta["draw_seed"] = draw_seed_;
    if (selfmask_.has_value()) meta["selfmask"] = selfmask_to_json(*selfmask_);
    c.put_bytes("estimator", meta.dump());
    put_gaussian_params(c, engine_.gaussian());
    put_outcome_params(c, engine_.outcome());
    return c;
  }

  Mode mode_;
  std::size_t n_draws_;
  std::uint64_t draw_seed_;
  std::optional<SelfMaskParams> selfmask_;
  AnalyticEngine engine_;
};

// ---------------------------------------------------------------------------
// Ground-truth and mean baselines
// ---------------------------------------------------------------------------

class TruthEstimator : public Estimator {
 public:
  explicit TruthEstimator(OutcomeParams op) : op_(std::move(op)) {}

  std::string name() const override { return "truth"; }

  std::vector<double> predict(const MaskedDataset& md) const override {
    if (!md.has_complete()) {
      throw ContractError("truth: complete covariates unavailable for this data");
    }
    std::vector<double> out(md.rows());
    for (std::size_t i = 0; i < md.rows(); ++i) out[i] = wave_noiseless(md.x_complete, i, op_);
    return out;
  }

  void save(const std::string& path) const override { to_container().write_file(path); }
  std::uint64_t state_hash() const override { return to_container().content_hash(); }

 private:
  Container to_container() const {
    Container c;
    json meta;
    meta["type"] = "truth";
    c.put_bytes("estimator", meta.dump());
    put_outcome_params(c, op_);
    return c;
  }

  OutcomeParams op_;
};

class MeanEstimator : public Estimator {
 public:
  explicit MeanEstimator(double mean) : mean_(mean) {}

  std::string name() const override { return "mean"; }

  std::vector<double> predict(const MaskedDataset& md) const override {
    return std::vector<double>(md.rows(), mean_);
  }

  void save(const std::string& path) const override { to_container().write_file(path); }
  std::uint64_t state_hash() const override { return to_container().content_hash(); }

 private:
  Container to_container() const {
    Container c;
    json meta;
    meta["type"] = "mean";
    meta["mean"] = mean_;
    c.put_bytes("estimator", meta.dump());
    return c;
  }

  double mean_;
};

// ---------------------------------------------------------------------------
// Impute-then-regress
// ---------------------------------------------------------------------------

class ImputeRegressEstimator : public Estimator {
 public:
  ImputeRegressEstimator(std::string name, IceModel imputer, NeuralNet net, std::size_t n_imp,
                         std::uint64_t draw_seed)
      : name_(std::move(name)),
        imputer_(std::move(imputer)),
        net_(std::move(net)),
        n_imp_(n_imp),
        draw_seed_(draw_seed) {}

  std::string name() const override { return name_; }

  std::vector<double> predict(const MaskedDataset& md) const override {
    Rng rng = Rng(draw_seed_).fork("predict");
    const std::size_t reps = imputer_.flags.probabilistic ? n_imp_ : 1;
    const std::vector<Matrix> designs = ice_transform(imputer_, md, rng, reps);
    std::vector<double> avg(md.rows(), 0.0);
    for (const Matrix& design : designs) {
      const std::vector<double> pred = network_predict(net_, design, Matrix());
      for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += pred[i];
    }
    for (double& v : avg) v /= static_cast<double>(designs.size());
    return avg;
  }

  void save(const std::string& path) const override { to_container().write_file(path); }
  std::uint64_t state_hash() const override { return to_container().content_hash(); }

 private:
  Container to_container() const {
    Container c;
    json meta;
    meta["type"] = "impute_regress";
    meta["name"] = name_;
    meta["n_imp"] = n_imp_;
    meta["draw_seed"] = draw_seed_;
    c.put_bytes("estimator", meta.dump());
    put_ice_model(c, "imputer/", imputer_);
    put_network(c, "net/", net_);
    return c;
  }

  std::string name_;
  IceModel imputer_;
  NeuralNet net_;
  std::size_t n_imp_;
  std::uint64_t draw_seed_;
};

// ---------------------------------------------------------------------------
// End-to-end embeddings
// ---------------------------------------------------------------------------

class EmbeddingEstimator : public Estimator {
 public:
  explicit EmbeddingEstimator(NeuralNet net) : net_(std::move(net)) {}

  std::string name() const override { return arch_kind_name(net_.kind); }

  std::vector<double> predict(const MaskedDataset& md) const override {
    return network_predict(net_, zero_filled(md), md.mask);
  }

  void save(const std::string& path) const override { to_container().write_file(path); }
  std::uint64_t state_hash() const override { return to_container().content_hash(); }

 private:
  Container to_container() const {
    Container c;
    json meta;
    meta["type"] = "embedding";
    c.put_bytes("estimator", meta.dump());
    put_network(c, "net/", net_);
    return c;
  }

  NeuralNet net_;
};

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

Matrix y_column(const MaskedDataset& md) { return column_matrix(md.y); }

TrainData stack_designs(const std::vector<Matrix>& designs, const std::vector<double>& y) {
  TrainData td;
  const std::size_t n = designs.front().rows();
  const std::size_t w = designs.front().cols();
  td.x = Matrix(n * designs.size(), w);
  td.y = Matrix(n * designs.size(), 1);
  for (std::size_t r = 0; r < designs.size(); ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w; ++j) td.x(r * n + i, j) = designs[r](i, j);
      td.y(r * n + i, 0) = y[i];
    }
  }
  return td;
}

std::unique_ptr<Estimator> fit_impute_regress(const std::string& name,
                                              const MaskedDataset& train,
                                              const MaskedDataset& val,
                                              const FitOptions& opt, Rng& rng) {
  IceFlags flags;
  flags.use_mask = name == "ice_mask";
  flags.probabilistic = name == "mice";
  const std::size_t n_imp = flags.probabilistic ? opt.n_imp : 1;

  Rng rng_imp = rng.fork("imputer");
  const IceModel imputer = ice_fit(train, flags, opt.ice_iters, opt.ridge_alpha);

  const std::vector<Matrix> train_designs = ice_transform(imputer, train, rng_imp, n_imp);
  Rng rng_val = rng.fork("imputer-val");
  const std::vector<Matrix> val_designs = ice_transform(imputer, val, rng_val, n_imp);

  TrainData td = stack_designs(train_designs, train.y);
  std::vector<TrainData> vals;
  for (const Matrix& design : val_designs) {
    TrainData v;
    v.x = design;
    v.y = y_column(val);
    vals.push_back(std::move(v));
  }

  Rng rng_init = rng.fork("net-init");
  NeuralNet net = make_network(ArchKind::kMlp, td.x.cols(), opt.mlp_width, opt.mlp_depth, 0,
                               true, rng_init);
  Rng rng_train = rng.fork("train");
  train_network(net, td, vals, opt.train, rng_train);

  return std::make_unique<ImputeRegressEstimator>(name, imputer, std::move(net), opt.n_imp,
                                                  rng.fork("draws").seed());
}

std::unique_ptr<Estimator> fit_y_pipeline(const std::string& name, const MaskedDataset& train,
                                          const MaskedDataset& val, const FitOptions& opt,
                                          Rng& rng) {
  const bool probabilistic = name == "mice_y";
  const std::size_t n_imp = probabilistic ? opt.n_imp : 1;
  Rng rng_imp = rng.fork("imputer");
  YConditionalPipeline pipeline =
      y_conditional_pipeline(train, probabilistic, n_imp, opt.ice_iters, opt.ridge_alpha,
                             rng_imp);

  // The predictor trains on the stage-1 completions (imputed with the
  // outcome); validation designs are imputed the same way. Deployment-time
  // transforms use only the y-free stage-2 imputer.
  TrainData td = stack_designs(pipeline.completed, train.y);
  Rng rng_val = rng.fork("imputer-val");
  const std::vector<Matrix> val_designs = ice_transform(pipeline.stage1, val, rng_val, n_imp);
  std::vector<TrainData> vals;
  for (const Matrix& design : val_designs) {
    TrainData v;
    v.x = design;
    v.y = y_column(val);
    vals.push_back(std::move(v));
  }

  Rng rng_init = rng.fork("net-init");
  NeuralNet net = make_network(ArchKind::kMlp, td.x.cols(), opt.mlp_width, opt.mlp_depth, 0,
                               true, rng_init);
  Rng rng_train = rng.fork("train");
  train_network(net, td, vals, opt.train, rng_train);

  return std::make_unique<ImputeRegressEstimator>(name, pipeline.stage2, std::move(net),
                                                  opt.n_imp, rng.fork("draws").seed());
}

std::unique_ptr<Estimator> fit_embedding(const std::string& name, const MaskedDataset& train,
                                         const MaskedDataset& val, const FitOptions& opt,
                                         Rng& rng) {
  const ArchKind kind = arch_kind_from_name(name);
  Rng rng_init = rng.fork("net-init");
  NeuralNet net = make_network(kind, train.dim(), opt.mlp_width, opt.mlp_depth, opt.n_blocks,
                               opt.neumise_observed_stats, rng_init);
  init_centering(net, train);

  TrainData td;
  td.x = zero_filled(train);
  td.mask = train.mask;
  td.y = y_column(train);
  TrainData vd;
  vd.x = zero_filled(val);
  vd.mask = val.mask;
  vd.y = y_column(val);

  Rng rng_train = rng.fork("train");
  train_network(net, td, {vd}, opt.train, rng_train);
  return std::make_unique<EmbeddingEstimator>(std::move(net));
}

}  // namespace

const std::vector<std::string>& registered_estimators() {
  static const std::vector<std::string> names = {
      "bayes", "cond_oracle", "prob_oracle", "truth",   "mean",    "ice",
      "ice_mask", "mice",      "ice_y",       "mice_y", "neumiss", "neumise"};
  return names;
}

bool estimator_known(const std::string& name) {
  const auto& names = registered_estimators();
  return std::find(names.begin(), names.end(), name) != names.end();
}

bool estimator_applicable(const std::string& name, const MaskedDataset& train) {
  if (!estimator_known(name)) return false;
  if (name == "bayes") {
    if (!train.gaussian.has_value() || !train.mechanism.has_value()) return false;
    const MechanismKind kind = train.mechanism->kind;
    return kind == MechanismKind::kMcar || kind == MechanismKind::kMarLogistic ||
           kind == MechanismKind::kSelfMask;
  }
  if (name == "cond_oracle" || name == "prob_oracle") return train.gaussian.has_value();
  if (name == "truth") return train.has_complete();
  return true;
}

std::unique_ptr<Estimator> fit_estimator(const std::string& name, const MaskedDataset& train,
                                         const MaskedDataset& val, const FitOptions& opt,
                                         Rng rng) {
  if (!estimator_known(name)) throw ConfigError("unknown estimator '" + name + "'");
  if (!estimator_applicable(name, train)) {
    throw ContractError("estimator '" + name + "' is not applicable to this data");
  }

  if (name == "bayes" || name == "cond_oracle" || name == "prob_oracle") {
    std::optional<SelfMaskParams> sm;
    if (train.mechanism.has_value() && train.mechanism->kind == MechanismKind::kSelfMask) {
      sm = train.mechanism->selfmask;
    }
    AnalyticFamilyEstimator::Mode mode = AnalyticFamilyEstimator::Mode::kBayes;
    if (name == "cond_oracle") {
      mode = AnalyticFamilyEstimator::Mode::kCondOracle;
      sm.reset();  // conditional-mean oracle uses the mechanism-free conditional
    } else if (name == "prob_oracle") {
      mode = AnalyticFamilyEstimator::Mode::kProbOracle;
    }
    return std::make_unique<AnalyticFamilyEstimator>(mode, *train.gaussian, train.outcome, sm,
                                                     opt.n_draws, rng.fork("draws").seed());
  }
  if (name == "truth") return std::make_unique<TruthEstimator>(train.outcome);
  if (name == "mean") {
    double m = 0.0;
    for (double v : train.y) m += v;
    return std::make_unique<MeanEstimator>(train.y.empty() ? 0.0
                                                           : m / static_cast<double>(train.y.size()));
  }
  if (name == "ice" || name == "ice_mask" || name == "mice") {
    return fit_impute_regress(name, train, val, opt, rng);
  }
  if (name == "ice_y" || name == "mice_y") return fit_y_pipeline(name, train, val, opt, rng);
  if (name == "neumiss" || name == "neumise") return fit_embedding(name, train, val, opt, rng);
  throw ConfigError("unknown estimator '" + name + "'");
}

std::unique_ptr<Estimator> load_estimator(const std::string& path) {
  const Container c = Container::read_file(path);
  const json meta = json::parse(c.bytes("estimator"));
  const std::string type = meta.at("type").get<std::string>();
  if (type == "analytic") {
    const std::string mode_name = meta.at("mode").get<std::string>();
    AnalyticFamilyEstimator::Mode mode;
    if (mode_name == "bayes") {
      mode = AnalyticFamilyEstimator::Mode::kBayes;
    } else if (mode_name == "cond_oracle") {
      mode = AnalyticFamilyEstimator::Mode::kCondOracle;
    } else if (mode_name == "prob_oracle") {
      mode = AnalyticFamilyEstimator::Mode::kProbOracle;
    } else {
      throw IoError("unknown analytic mode '" + mode_name + "'");
    }
    std::optional<SelfMaskParams> sm;
    if (meta.contains("selfmask")) sm = selfmask_from_json(meta.at("selfmask"));
    return std::make_unique<AnalyticFamilyEstimator>(
        mode, get_gaussian_params(c), get_outcome_params(c), sm,
        meta.at("n_draws").get<std::size_t>(), meta.at("draw_seed").get<std::uint64_t>());
  }
  if (type == "truth") return std::make_unique<TruthEstimator>(get_outcome_params(c));
  if (type == "mean") return std::make_unique<MeanEstimator>(meta.at("mean").get<double>());
  if (type == "impute_regress") {
    return std::make_unique<ImputeRegressEstimator>(
        meta.at("name").get<std::string>(), get_ice_model(c, "imputer/"),
        get_network(c, "net/"), meta.at("n_imp").get<std::size_t>(),
        meta.at("draw_seed").get<std::uint64_t>());
  }
  if (type == "embedding") {
    return std::make_unique<EmbeddingEstimator>(get_network(c, "net/"));
  }
  throw IoError("unknown estimator type '" + type + "'");
}

}  // namespace misshift
