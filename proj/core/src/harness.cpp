#include "misshift/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "misshift/analytic.hpp"
#include "misshift/errors.hpp"
#include "misshift/neural.hpp"

namespace misshift {

namespace {

std::string format_rate(double r) {
  std::ostringstream ss;
  ss.precision(2);
  ss << std::fixed << r;
  return ss.str();
}

std::string dataset_tag(const ExperimentConfig& cfg) {
  if (cfg.dataset.simulated) {
    std::ostringstream ss;
    ss << "sim-d" << cfg.dataset.d << "-l" << cfg.dataset.lambda;
    return ss.str();
  }
  return "tab";
}

MechanismSpec draw_spec(const ExperimentConfig& cfg, const Dataset& ds, double rate, Rng rng) {
  if (rate == 0.0) return draw_mcar_spec(0.0);
  switch (cfg.mechanism.kind) {
    case MechanismKind::kMcar:
      return draw_mcar_spec(rate);
    case MechanismKind::kMarLogistic:
      return draw_mar_logistic_spec(ds, rate, rng);
    case MechanismKind::kSelfMask:
      return draw_selfmask_spec(ds, rate, cfg.mechanism.selfmask_tilt);
    case MechanismKind::kMarY:
      return draw_mar_y_spec(ds, rate, cfg.mechanism.mar_y_slope_scale, rng);
  }
  throw ConfigError("draw_spec: unhandled mechanism kind");
}

// The analytic reference exists for Gaussian covariates under mechanisms
// whose Bayes predictor has closed form.
bool bayes_reference_available(const ExperimentConfig& cfg) {
  return cfg.dataset.simulated && cfg.mechanism.kind != MechanismKind::kMarY;
}

double bayes_reference_mse(const MaskedDataset& test, const MechanismSpec& spec) {
  std::optional<SelfMaskParams> sm;
  if (spec.kind == MechanismKind::kSelfMask) sm = spec.selfmask;
  AnalyticEngine engine(*test.gaussian, test.outcome, sm);
  std::vector<double> pred(test.rows());
  for (std::size_t i = 0; i < test.rows(); ++i) pred[i] = engine.bayes(masked_row(test, i));
  return empirical_bayes_risk(pred, test.y);
}

Dataset subset_dataset(const Dataset& full, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.x = select_rows(full.x, rows);
  out.y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out.y[i] = full.y[rows[i]];
  out.gaussian = full.gaussian;
  out.outcome = full.outcome;
  out.seed = full.seed;
  out.origin = full.origin;
  return out;
}

bool is_learned(const std::string& name) {
  return name == "ice" || name == "ice_mask" || name == "mice" || name == "ice_y" ||
         name == "mice_y" || name == "neumiss" || name == "neumise";
}

}  // namespace

std::string resolve_output_dir(const ExperimentConfig& cfg) {
  const char* root = std::getenv("MISSHIFT_OUTPUT_ROOT");
  if (root != nullptr && root[0] != '\0') {
    return (std::filesystem::path(root) / cfg.output_dir).string();
  }
  return cfg.output_dir;
}

std::size_t resolve_workers(const ExperimentConfig& cfg) {
  const char* env = std::getenv("MISSHIFT_WORKERS");
  if (env != nullptr && env[0] != '\0') {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  if (cfg.workers > 0) return cfg.workers;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

Scenario build_scenario(const ExperimentConfig& cfg, std::size_t rep) {
  Rng rep_rng = Rng(cfg.master_seed).fork("rep-" + std::to_string(rep));
  const std::size_t total = cfg.sizes.train + cfg.sizes.val + cfg.sizes.test;

  std::shared_ptr<const Dataset> data;
  if (cfg.dataset.simulated) {
    data = std::make_shared<Dataset>(make_simulated_dataset(
        cfg.dataset.d, cfg.dataset.lambda, total, rep_rng.fork("dataset").seed()));
  } else {
    Dataset full =
        ingest_table(cfg.dataset.path, cfg.dataset.schema, rep_rng.fork("ingest").seed());
    if (full.x.rows() < total) {
      throw ConfigError("ingested table has " + std::to_string(full.x.rows()) +
                        " complete rows, fewer than the requested " + std::to_string(total));
    }
    std::vector<std::size_t> perm(full.x.rows());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng shuffle_rng = rep_rng.fork("shuffle");
    shuffle_rng.shuffle(perm);
    perm.resize(total);
    data = std::make_shared<Dataset>(subset_dataset(full, perm));
  }

  Scenario sc;
  sc.rep = rep;
  const std::string base = dataset_tag(cfg) + "-" + mechanism_kind_name(cfg.mechanism.kind);
  sc.source_id = base + "-src" + format_rate(cfg.source_rate);

  const std::size_t t = cfg.sizes.train, v = cfg.sizes.val, te = cfg.sizes.test;
  auto split3 = [&](const MaskedDataset& md, MaskedDataset& train, MaskedDataset& val,
                    MaskedDataset& test) {
    train = md.take_rows(0, t);
    val = md.take_rows(t, t + v);
    test = md.take_rows(t + v, t + v + te);
  };

  sc.source_spec = draw_spec(cfg, *data, cfg.source_rate, rep_rng.fork("mech-source"));
  {
    Rng mask_rng = rep_rng.fork("mask-source");
    const MaskedDataset masked = apply_mechanism(sc.source_spec, data, mask_rng);
    split3(masked, sc.source_train, sc.source_val, sc.source_test);
  }
  if (bayes_reference_available(cfg)) {
    sc.source_bayes_mse = bayes_reference_mse(sc.source_test, sc.source_spec);
  }

  for (std::size_t k = 0; k < cfg.target_rates.size(); ++k) {
    const double rate = cfg.target_rates[k];
    TargetArm arm;
    arm.rate = rate;
    arm.scenario_id = base + "-" + format_rate(cfg.source_rate) + "to" + format_rate(rate);
    arm.shifted_environment = rate == 0.0 ? "complete" : "target-shifted";
    // Mechanism parameters are drawn fresh for the target environment.
    arm.spec = draw_spec(cfg, *data, rate, rep_rng.fork("mech-target-" + std::to_string(k)));
    Rng mask_rng = rep_rng.fork("mask-target-" + std::to_string(k));
    const MaskedDataset masked = apply_mechanism(arm.spec, data, mask_rng);
    split3(masked, arm.train, arm.val, arm.test);
    if (bayes_reference_available(cfg)) {
      arm.bayes_mse = bayes_reference_mse(arm.test, arm.spec);
    }
    sc.arms.push_back(std::move(arm));
  }
  return sc;
}

namespace {

struct JobOutput {
  std::vector<ResultRecord> records;
};

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

void run_job(const ExperimentConfig& cfg, const Scenario& sc, const std::string& estimator,
             ResultStore& store, JobOutput& out) {
  Rng job_rng =
      Rng(cfg.master_seed).fork("rep-" + std::to_string(sc.rep)).fork("estimator-" + estimator);

  auto emit = [&](const std::string& scenario_id, const std::string& environment, double mse,
                  std::optional<double> bayes, std::uint64_t seed, double wall,
                  const std::string& status) {
    ResultRecord r;
    r.scenario = scenario_id;
    r.estimator = estimator;
    r.environment = environment;
    r.rep = static_cast<long>(sc.rep);
    r.mse = mse;
    r.bayes_mse = bayes;
    r.seed = seed;
    r.wall_ms = wall;
    r.status = status;
    store.append(r);
    out.records.push_back(std::move(r));
  };

  const double nan = std::nan("");
  if (!estimator_applicable(estimator, sc.source_train)) {
    emit(sc.source_id, "source", nan, sc.source_bayes_mse, job_rng.seed(), 0.0, "inapplicable");
    for (const TargetArm& arm : sc.arms) {
      emit(arm.scenario_id, arm.shifted_environment, nan, arm.bayes_mse, job_rng.seed(), 0.0,
           "inapplicable");
      emit(arm.scenario_id, "target-noshift", nan, arm.bayes_mse, job_rng.seed(), 0.0,
           "inapplicable");
    }
    return;
  }

  FitOptions opts = cfg.fit;
  if (cfg.grid.enabled && is_learned(estimator)) {
    auto evaluate = [&](const TrainConfig& tc, std::size_t width, std::size_t depth,
                        std::uint64_t seed) {
      FitOptions o = opts;
      o.train = tc;
      o.mlp_width = width;
      o.mlp_depth = depth;
      const auto model = fit_estimator(estimator, sc.source_train, sc.source_val, o, Rng(seed));
      return empirical_bayes_risk(model->predict(sc.source_val), sc.source_val.y);
    };
    Rng grid_rng = job_rng.fork("grid");
    const GridChoice choice =
        grid_search(cfg.grid.space, opts.train, evaluate, cfg.grid.reps, grid_rng);
    opts.train = choice.train;
    opts.mlp_width = choice.width;
    opts.mlp_depth = choice.depth;
  }

  // Source fit and all evaluations of the source-trained model.
  const Rng source_rng = job_rng.fork("fit-source");
  const auto t0 = std::chrono::steady_clock::now();
  std::unique_ptr<Estimator> model;
  std::string source_error;
  try {
    model = fit_estimator(estimator, sc.source_train, sc.source_val, opts, source_rng);
  } catch (const Error& e) {
    source_error = std::string("error: ") + e.what();
  }

  if (model == nullptr) {
    emit(sc.source_id, "source", nan, sc.source_bayes_mse, source_rng.seed(), elapsed_ms(t0),
         source_error);
    for (const TargetArm& arm : sc.arms) {
      emit(arm.scenario_id, arm.shifted_environment, nan, arm.bayes_mse, source_rng.seed(), 0.0,
           source_error);
    }
  } else {
    const double source_mse =
        empirical_bayes_risk(model->predict(sc.source_test), sc.source_test.y);
    emit(sc.source_id, "source", source_mse, sc.source_bayes_mse, source_rng.seed(),
         elapsed_ms(t0), "ok");

    // Target environments must not feed back into the trained model; the
    // state hash pins that down.
    const std::uint64_t hash_before = model->state_hash();
    std::vector<double> shifted_mse(sc.arms.size());
    std::vector<double> shifted_wall(sc.arms.size());
    for (std::size_t k = 0; k < sc.arms.size(); ++k) {
      const auto ta = std::chrono::steady_clock::now();
      shifted_mse[k] = empirical_bayes_risk(model->predict(sc.arms[k].test), sc.arms[k].test.y);
      shifted_wall[k] = elapsed_ms(ta);
    }
    const bool clean = model->state_hash() == hash_before;
    for (std::size_t k = 0; k < sc.arms.size(); ++k) {
      emit(sc.arms[k].scenario_id, sc.arms[k].shifted_environment,
           clean ? shifted_mse[k] : nan, sc.arms[k].bayes_mse, source_rng.seed(),
           shifted_wall[k], clean ? "ok" : "error: target evaluation mutated the model");
    }
  }

  // No-shift controls, trained directly in each target environment.
  for (std::size_t k = 0; k < sc.arms.size(); ++k) {
    const TargetArm& arm = sc.arms[k];
    const Rng arm_rng = job_rng.fork("fit-noshift-" + std::to_string(k));
    const auto ta = std::chrono::steady_clock::now();
    try {
      const auto control = fit_estimator(estimator, arm.train, arm.val, opts, arm_rng);
      const double mse = empirical_bayes_risk(control->predict(arm.test), arm.test.y);
      emit(arm.scenario_id, "target-noshift", mse, arm.bayes_mse, arm_rng.seed(),
           elapsed_ms(ta), "ok");
    } catch (const Error& e) {
      emit(arm.scenario_id, "target-noshift", nan, arm.bayes_mse, arm_rng.seed(),
           elapsed_ms(ta), std::string("error: ") + e.what());
    }
  }
}

}  // namespace

std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg) {
  validate_experiment_config(cfg);
  for (const std::string& name : cfg.estimators) {
    if (!estimator_known(name)) throw ConfigError("unknown estimator '" + name + "'");
  }

  const std::string out_dir = resolve_output_dir(cfg);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream cfg_copy(std::filesystem::path(out_dir) / "config.json");
    cfg_copy << experiment_config_to_json(cfg) << "\n";
  }
  ResultStore store((std::filesystem::path(out_dir) / "results.csv").string());

  if (cfg.estimators.empty()) return {};

  std::vector<Scenario> scenarios;
  scenarios.reserve(cfg.repetitions);
  for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
    scenarios.push_back(build_scenario(cfg, rep));
  }

  struct Job {
    std::size_t scenario_index;
    std::string estimator;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    for (const std::string& est : cfg.estimators) jobs.push_back({s, est});
  }

  std::vector<JobOutput> outputs(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  const std::size_t workers = std::min(resolve_workers(cfg), jobs.size());
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        try {
          run_job(cfg, scenarios[jobs[i].scenario_index], jobs[i].estimator, store, outputs[i]);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);

  std::vector<ResultRecord> all;
  for (const JobOutput& o : outputs) {
    all.insert(all.end(), o.records.begin(), o.records.end());
  }
  return all;
}

}  // namespace misshift
