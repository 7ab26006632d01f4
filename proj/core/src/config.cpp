#include "misshift/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "misshift/errors.hpp"

namespace misshift {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (known.count(it.key()) == 0) {
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return obj.at(key).get<T>();
}

DatasetConfig parse_dataset(const json& j) {
  reject_unknown_keys(j, {"kind", "d", "lambda", "path", "schema"}, "dataset");
  DatasetConfig out;
  const std::string kind = get_or<std::string>(j, "kind", "simulated");
  if (kind == "simulated") {
    out.simulated = true;
    out.d = get_or<std::size_t>(j, "d", out.d);
    out.lambda = get_or<double>(j, "lambda", out.lambda);
  } else if (kind == "ingested") {
    out.simulated = false;
    out.path = j.at("path").get<std::string>();
    if (!j.contains("schema")) throw ConfigError("config: ingested dataset needs a schema");
    for (const auto& col : j.at("schema").items()) {
      ColumnSpec spec;
      spec.name = col.key();
      const std::string ck = col.value().get<std::string>();
      if (ck == "continuous") {
        spec.kind = ColumnKind::kContinuous;
      } else if (ck == "binary") {
        spec.kind = ColumnKind::kBinary;
      } else {
        throw ConfigError("config: column kind must be continuous or binary, got '" + ck + "'");
      }
      out.schema.push_back(std::move(spec));
    }
  } else {
    throw ConfigError("config: dataset kind must be simulated or ingested");
  }
  return out;
}

FitOptions parse_fit(const json& j) {
  reject_unknown_keys(j,
                      {"learning_rate", "weight_decay", "batch_size", "max_epochs",
                       "early_stop_patience", "lr_decay_patience", "lr_decay_factor",
                       "mlp_width", "mlp_depth", "n_blocks", "n_imp", "n_draws", "ice_iters",
                       "ridge_alpha", "neumise_stats"},
                      "fit");
  FitOptions out;
  out.train.learning_rate = get_or<double>(j, "learning_rate", out.train.learning_rate);
  out.train.weight_decay = get_or<double>(j, "weight_decay", out.train.weight_decay);
  out.train.batch_size = get_or<std::size_t>(j, "batch_size", out.train.batch_size);
  out.train.max_epochs = get_or<std::size_t>(j, "max_epochs", out.train.max_epochs);
  out.train.early_stop_patience =
      get_or<std::size_t>(j, "early_stop_patience", out.train.early_stop_patience);
  out.train.lr_decay_patience =
      get_or<std::size_t>(j, "lr_decay_patience", out.train.lr_decay_patience);
  out.train.lr_decay_factor = get_or<double>(j, "lr_decay_factor", out.train.lr_decay_factor);
  out.mlp_width = get_or<std::size_t>(j, "mlp_width", out.mlp_width);
  out.mlp_depth = get_or<std::size_t>(j, "mlp_depth", out.mlp_depth);
  out.n_blocks = get_or<std::size_t>(j, "n_blocks", out.n_blocks);
  out.n_imp = get_or<std::size_t>(j, "n_imp", out.n_imp);
  out.n_draws = get_or<std::size_t>(j, "n_draws", out.n_draws);
  out.ice_iters = get_or<std::size_t>(j, "ice_iters", out.ice_iters);
  out.ridge_alpha = get_or<double>(j, "ridge_alpha", out.ridge_alpha);
  const std::string stats = get_or<std::string>(j, "neumise_stats", "observed");
  if (stats == "observed") {
    out.neumise_observed_stats = true;
  } else if (stats == "zero_filled") {
    out.neumise_observed_stats = false;
  } else {
    throw ConfigError("config: neumise_stats must be observed or zero_filled");
  }
  return out;
}

GridConfig parse_grid(const json& j) {
  reject_unknown_keys(j, {"enabled", "reps", "learning_rates", "weight_decays", "widths",
                          "depths"},
                      "grid");
  GridConfig out;
  out.enabled = get_or<bool>(j, "enabled", false);
  out.reps = get_or<std::size_t>(j, "reps", out.reps);
  if (j.contains("learning_rates"))
    out.space.learning_rates = j.at("learning_rates").get<std::vector<double>>();
  if (j.contains("weight_decays"))
    out.space.weight_decays = j.at("weight_decays").get<std::vector<double>>();
  if (j.contains("widths")) out.space.widths = j.at("widths").get<std::vector<std::size_t>>();
  if (j.contains("depths")) out.space.depths = j.at("depths").get<std::vector<std::size_t>>();
  return out;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown_keys(j,
                      {"version", "master_seed", "output_dir", "workers", "dataset",
                       "mechanism", "rates", "sizes", "repetitions", "estimators", "fit",
                       "grid"},
                      "top level");
  ExperimentConfig cfg;
  cfg.version = get_or<int>(j, "version", kConfigVersion);
  if (cfg.version != kConfigVersion) {
    throw ConfigError("config: unsupported version " + std::to_string(cfg.version));
  }
  cfg.master_seed = get_or<std::uint64_t>(j, "master_seed", 0);
  cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir);
  cfg.workers = get_or<std::size_t>(j, "workers", 0);
  if (j.contains("dataset")) cfg.dataset = parse_dataset(j.at("dataset"));
  if (j.contains("mechanism")) {
    const json& m = j.at("mechanism");
    reject_unknown_keys(m, {"kind", "selfmask_tilt", "mar_y_slope_scale"}, "mechanism");
    cfg.mechanism.kind = mechanism_kind_from_name(m.at("kind").get<std::string>());
    cfg.mechanism.selfmask_tilt = get_or<double>(m, "selfmask_tilt", 2.0);
    cfg.mechanism.mar_y_slope_scale = get_or<double>(m, "mar_y_slope_scale", 1.0);
  }
  if (j.contains("rates")) {
    const json& r = j.at("rates");
    reject_unknown_keys(r, {"source", "targets"}, "rates");
    cfg.source_rate = r.at("source").get<double>();
    cfg.target_rates = r.at("targets").get<std::vector<double>>();
  }
  if (j.contains("sizes")) {
    const json& s = j.at("sizes");
    reject_unknown_keys(s, {"train", "val", "test"}, "sizes");
    cfg.sizes.train = s.at("train").get<std::size_t>();
    cfg.sizes.val = s.at("val").get<std::size_t>();
    cfg.sizes.test = s.at("test").get<std::size_t>();
  }
  cfg.repetitions = get_or<std::size_t>(j, "repetitions", 1);
  if (j.contains("estimators")) {
    cfg.estimators = j.at("estimators").get<std::vector<std::string>>();
  }
  if (j.contains("fit")) cfg.fit = parse_fit(j.at("fit"));
  if (j.contains("grid")) cfg.grid = parse_grid(j.at("grid"));
  validate_experiment_config(cfg);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["version"] = cfg.version;
  j["master_seed"] = cfg.master_seed;
  j["output_dir"] = cfg.output_dir;
  j["workers"] = cfg.workers;
  json ds;
  if (cfg.dataset.simulated) {
    ds["kind"] = "simulated";
    ds["d"] = cfg.dataset.d;
    ds["lambda"] = cfg.dataset.lambda;
  } else {
    ds["kind"] = "ingested";
    ds["path"] = cfg.dataset.path;
    json schema;
    for (const ColumnSpec& col : cfg.dataset.schema) {
      schema[col.name] = col.kind == ColumnKind::kBinary ? "binary" : "continuous";
    }
    ds["schema"] = std::move(schema);
  }
  j["dataset"] = std::move(ds);
  j["mechanism"] = {{"kind", mechanism_kind_name(cfg.mechanism.kind)},
                    {"selfmask_tilt", cfg.mechanism.selfmask_tilt},
                    {"mar_y_slope_scale", cfg.mechanism.mar_y_slope_scale}};
  j["rates"] = {{"source", cfg.source_rate}, {"targets", cfg.target_rates}};
  j["sizes"] = {{"train", cfg.sizes.train}, {"val", cfg.sizes.val}, {"test", cfg.sizes.test}};
  j["repetitions"] = cfg.repetitions;
  j["estimators"] = cfg.estimators;
  j["fit"] = {{"learning_rate", cfg.fit.train.learning_rate},
              {"weight_decay", cfg.fit.train.weight_decay},
              {"batch_size", cfg.fit.train.batch_size},
              {"max_epochs", cfg.fit.train.max_epochs},
              {"early_stop_patience", cfg.fit.train.early_stop_patience},
              {"lr_decay_patience", cfg.fit.train.lr_decay_patience},
              {"lr_decay_factor", cfg.fit.train.lr_decay_factor},
              {"mlp_width", cfg.fit.mlp_width},
              {"mlp_depth", cfg.fit.mlp_depth},
              {"n_blocks", cfg.fit.n_blocks},
              {"n_imp", cfg.fit.n_imp},
              {"n_draws", cfg.fit.n_draws},
              {"ice_iters", cfg.fit.ice_iters},
              {"ridge_alpha", cfg.fit.ridge_alpha},
              {"neumise_stats", cfg.fit.neumise_observed_stats ? "observed" : "zero_filled"}};
  j["grid"] = {{"enabled", cfg.grid.enabled},
               {"reps", cfg.grid.reps},
               {"learning_rates", cfg.grid.space.learning_rates},
               {"weight_decays", cfg.grid.space.weight_decays},
               {"widths", cfg.grid.space.widths},
               {"depths", cfg.grid.space.depths}};
  return j.dump(2);
}

void validate_experiment_config(const ExperimentConfig& cfg) {
  if (cfg.sizes.train == 0 || cfg.sizes.val == 0 || cfg.sizes.test == 0) {
    throw ConfigError("config: sizes must be positive");
  }
  if (cfg.repetitions < 1) throw ConfigError("config: repetitions must be at least 1");
  if (!(cfg.source_rate >= 0.0 && cfg.source_rate < 1.0)) {
    throw ConfigError("config: source rate must lie in [0, 1)");
  }
  for (double r : cfg.target_rates) {
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("config: target rates must lie in [0, 1)");
  }
  if (cfg.dataset.simulated) {
    if (cfg.dataset.d < 1) throw ConfigError("config: d must be at least 1");
    if (!(cfg.dataset.lambda > 0.0 && cfg.dataset.lambda <= 1.0)) {
      throw ConfigError("config: lambda must lie in (0, 1]");
    }
  } else if (cfg.dataset.path.empty()) {
    throw ConfigError("config: ingested dataset needs a path");
  }
}

}  // namespace misshift
