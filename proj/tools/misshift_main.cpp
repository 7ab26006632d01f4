// Command-line front end: simulate / mask / train / evaluate / run / report.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "misshift/analytic.hpp"
#include "misshift/config.hpp"
#include "misshift/datagen.hpp"
#include "misshift/errors.hpp"
#include "misshift/estimator.hpp"
#include "misshift/harness.hpp"
#include "misshift/io.hpp"
#include "misshift/missingness.hpp"
#include "misshift/report.hpp"

namespace {

using namespace misshift;

std::vector<ColumnSpec> load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const nlohmann::json j = nlohmann::json::parse(ss.str());
  std::vector<ColumnSpec> schema;
  for (const auto& item : j.items()) {
    ColumnSpec spec;
    spec.name = item.key();
    const std::string kind = item.value().get<std::string>();
    if (kind == "continuous") {
      spec.kind = ColumnKind::kContinuous;
    } else if (kind == "binary") {
      spec.kind = ColumnKind::kBinary;
    } else {
      throw ConfigError("schema: column kind must be continuous or binary");
    }
    schema.push_back(std::move(spec));
  }
  return schema;
}

int cmd_simulate(std::size_t d, double lambda, std::size_t n, std::uint64_t seed,
                 const std::string& csv, const std::string& schema_path,
                 const std::string& out) {
  Dataset ds;
  if (!csv.empty()) {
    ds = ingest_table(csv, load_schema(schema_path), seed);
    if (n > 0 && n < ds.x.rows()) {
      Dataset trimmed;
      trimmed.x = Matrix(n, ds.x.cols());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < ds.x.cols(); ++j) trimmed.x(i, j) = ds.x(i, j);
      trimmed.y.assign(ds.y.begin(), ds.y.begin() + static_cast<std::ptrdiff_t>(n));
      trimmed.outcome = ds.outcome;
      trimmed.seed = ds.seed;
      trimmed.origin = ds.origin;
      ds = std::move(trimmed);
    }
  } else {
    ds = make_simulated_dataset(d, lambda, n, seed);
  }
  save_dataset(ds, out);
  std::cout << "wrote " << ds.x.rows() << " x " << ds.x.cols() << " dataset to " << out << "\n";
  return 0;
}

int cmd_mask(const std::string& data_path, const std::string& mechanism, double rate,
             double tilt, double slope_scale, std::uint64_t seed, const std::string& out) {
  const auto ds = std::make_shared<Dataset>(load_dataset(data_path));
  Rng rng(seed);
  const MechanismKind kind = mechanism_kind_from_name(mechanism);
  MechanismSpec spec;
  switch (kind) {
    case MechanismKind::kMcar: spec = draw_mcar_spec(rate); break;
    case MechanismKind::kMarLogistic: {
      Rng draw_rng = rng.fork("draw");
      spec = draw_mar_logistic_spec(*ds, rate, draw_rng);
      break;
    }
    case MechanismKind::kSelfMask: spec = draw_selfmask_spec(*ds, rate, tilt); break;
    case MechanismKind::kMarY: {
      Rng draw_rng = rng.fork("draw");
      spec = draw_mar_y_spec(*ds, rate, slope_scale, draw_rng);
      break;
    }
  }
  const MaskedDataset md = apply_mechanism(spec, ds, rng);
  save_masked_dataset(md, out);
  std::cout << "masked " << md.rows() << " rows at empirical rate " << empirical_missing_rate(md)
            << ", wrote " << out << "\n";
  return 0;
}

FitOptions fit_options_from_file(const std::string& path) {
  if (path.empty()) return FitOptions();
  // Reuse the experiment-config parser; only the "fit" section applies here.
  const ExperimentConfig cfg = load_experiment_config(path);
  return cfg.fit;
}

int cmd_train(const std::string& train_path, const std::string& val_path,
              const std::string& estimator, const std::string& config_path,
              std::uint64_t seed, const std::string& out) {
  const MaskedDataset train = load_masked_dataset(train_path);
  const MaskedDataset val = load_masked_dataset(val_path);
  const FitOptions opt = fit_options_from_file(config_path);
  auto model = fit_estimator(estimator, train, val, opt, Rng(seed));
  model->save(out);
  std::cout << "trained " << estimator << ", wrote " << out << "\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path,
                 const std::string& results_path, const std::string& scenario, long rep) {
  const auto model = load_estimator(model_path);
  const MaskedDataset test = load_masked_dataset(data_path);
  const double mse = empirical_bayes_risk(model->predict(test), test.y);
  std::cout << model->name() << " mse " << format_double(mse) << "\n";
  if (!results_path.empty()) {
    ResultStore store(results_path);
    ResultRecord r;
    r.scenario = scenario.empty() ? "adhoc" : scenario;
    r.estimator = model->name();
    r.environment = "adhoc";
    r.rep = rep;
    r.mse = mse;
    store.append(r);
  }
  return 0;
}

int cmd_run(const std::string& config_path) {
  const ExperimentConfig cfg = load_experiment_config(config_path);
  const auto records = run_experiment(cfg);
  std::size_t ok = 0;
  for (const auto& r : records) {
    if (r.status == "ok") ++ok;
  }
  std::cout << "wrote " << records.size() << " records (" << ok << " ok) to "
            << resolve_output_dir(cfg) << "/results.csv\n";
  return 0;
}

int cmd_report(const std::string& results_path, const std::string& baseline,
               const std::string& out_dir) {
  const auto records = ResultStore::read(results_path);
  const auto written = write_report(records, baseline, out_dir);
  for (const auto& path : written) std::cout << "wrote " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"missingness-shift benchmark harness"};
  app.require_subcommand(1);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "generate or ingest a complete dataset");
  std::size_t sim_d = 10, sim_n = 10000;
  double sim_lambda = 0.7;
  std::uint64_t sim_seed = 1;
  std::string sim_csv, sim_schema, sim_out = "dataset.msbc";
  simulate->add_option("--d", sim_d, "covariate dimension");
  simulate->add_option("--lambda", sim_lambda, "correlation control in (0,1]");
  simulate->add_option("--n", sim_n, "number of rows");
  simulate->add_option("--seed", sim_seed, "rng seed");
  simulate->add_option("--csv", sim_csv, "ingest this comma-delimited table instead");
  simulate->add_option("--schema", sim_schema, "JSON column->kind map for --csv");
  simulate->add_option("--out", sim_out, "output container path");

  // mask
  auto* mask = app.add_subcommand("mask", "apply a missingness mechanism");
  std::string mask_data, mask_mechanism = "mcar", mask_out = "masked.msbc";
  double mask_rate = 0.5, mask_tilt = 2.0, mask_slope = 1.0;
  std::uint64_t mask_seed = 1;
  mask->add_option("--data", mask_data, "dataset container")->required();
  mask->add_option("--mechanism", mask_mechanism, "mcar|mar_logistic|selfmask|mar_y");
  mask->add_option("--rate", mask_rate, "target missing rate in [0,1)");
  mask->add_option("--k", mask_tilt, "self-masking tilt");
  mask->add_option("--slope-scale", mask_slope, "outcome-masking slope multiplier");
  mask->add_option("--seed", mask_seed, "rng seed");
  mask->add_option("--out", mask_out, "output container path");

  // train
  auto* train = app.add_subcommand("train", "fit an estimator on masked data");
  std::string train_train, train_val, train_estimator, train_config, train_out = "model.msbc";
  std::uint64_t train_seed = 1;
  train->add_option("--train", train_train, "masked training container")->required();
  train->add_option("--val", train_val, "masked validation container")->required();
  train->add_option("--estimator", train_estimator, "registered estimator name")->required();
  train->add_option("--config", train_config, "experiment config supplying the fit section");
  train->add_option("--seed", train_seed, "rng seed");
  train->add_option("--out", train_out, "output model path");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "compute test MSE of a saved model");
  std::string eval_model, eval_data, eval_results, eval_scenario;
  long eval_rep = 0;
  evaluate->add_option("--model", eval_model, "model container")->required();
  evaluate->add_option("--data", eval_data, "masked test container")->required();
  evaluate->add_option("--results", eval_results, "append a record to this CSV");
  evaluate->add_option("--scenario", eval_scenario, "scenario id for the record");
  evaluate->add_option("--rep", eval_rep, "repetition index for the record");

  // run
  auto* run = app.add_subcommand("run", "run a full experiment grid");
  std::string run_config;
  run->add_option("--config", run_config, "experiment config JSON")->required();

  // report
  auto* report = app.add_subcommand("report", "summarize results and draw figures");
  std::string report_results, report_baseline = "bayes", report_out = "report";
  report->add_option("--results", report_results, "results.csv path")->required();
  report->add_option("--baseline", report_baseline,
                     "bayes | complete-data-predictor | estimator name");
  report->add_option("--out-dir", report_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      return cmd_simulate(sim_d, sim_lambda, sim_n, sim_seed, sim_csv, sim_schema, sim_out);
    }
    if (mask->parsed()) {
      return cmd_mask(mask_data, mask_mechanism, mask_rate, mask_tilt, mask_slope, mask_seed,
                      mask_out);
    }
    if (train->parsed()) {
      return cmd_train(train_train, train_val, train_estimator, train_config, train_seed,
                       train_out);
    }
    if (evaluate->parsed()) {
      return cmd_evaluate(eval_model, eval_data, eval_results, eval_scenario, eval_rep);
    }
    if (run->parsed()) return cmd_run(run_config);
    if (report->parsed()) return cmd_report(report_results, report_baseline, report_out);
  } catch (const misshift::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
