#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "misshift/analytic.hpp"
#include "misshift/config.hpp"
#include "misshift/datagen.hpp"
#include "misshift/errors.hpp"
#include "misshift/estimator.hpp"
#include "misshift/harness.hpp"
#include "misshift/io.hpp"
#include "misshift/missingness.hpp"
#include "misshift/report.hpp"

using namespace misshift;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("misshift_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ExperimentConfig tiny_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.master_seed = 99;
  cfg.output_dir = out_dir;
  cfg.workers = 2;
  cfg.dataset.simulated = true;
  cfg.dataset.d = 4;
  cfg.dataset.lambda = 0.7;
  cfg.mechanism.kind = MechanismKind::kMcar;
  cfg.source_rate = 0.5;
  cfg.target_rates = {0.25};
  cfg.sizes = {300, 120, 120};
  cfg.repetitions = 2;
  cfg.estimators = {"mean", "truth", "bayes"};
  cfg.fit.train.max_epochs = 3;
  cfg.fit.mlp_width = 8;
  cfg.fit.n_blocks = 2;
  return cfg;
}

bool spec_equal(const MechanismSpec& a, const MechanismSpec& b) {
  return mechanism_to_json(a) == mechanism_to_json(b);
}

}  // namespace

TEST_CASE("container round trip preserves payloads bitwise") {
  Container c;
  Rng rng(1);
  Matrix m(7, 3);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal();
  m(0, 0) = na_value();  // NaN cells survive serialization
  Matrix bits(5, 2);
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  c.put_matrix("m", m);
  c.put_bitmask("bits", bits);
  c.put_bytes("blob", std::string("{\"k\":1}"));

  const Container back = Container::deserialize(c.serialize());
  const Matrix& m2 = back.matrix("m");
  REQUIRE(m2.same_shape(m));
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (is_na(m[i])) {
      CHECK(is_na(m2[i]));
    } else {
      CHECK(m2[i] == m[i]);
    }
  }
  CHECK(bitwise_equal(back.bitmask("bits"), bits));
  CHECK(back.bytes("blob") == "{\"k\":1}");
  CHECK(back.content_hash() == c.content_hash());
}

TEST_CASE("container rejects corrupt input") {
  Container c;
  c.put_bytes("b", "x");
  std::string buf = c.serialize();
  CHECK_THROWS_AS(Container::deserialize(buf.substr(0, buf.size() - 1)), IoError);
  buf[0] = 'Z';
  CHECK_THROWS_AS(Container::deserialize(buf), IoError);
}

TEST_CASE("dataset persistence round trip") {
  const auto dir = temp_dir("dataset_io");
  const Dataset ds = make_simulated_dataset(5, 0.7, 80, 7);
  const std::string path = (dir / "data.msbc").string();
  save_dataset(ds, path);
  CHECK(std::filesystem::exists(path + ".meta.json"));
  const Dataset back = load_dataset(path);
  CHECK(bitwise_equal(back.x, ds.x));
  CHECK(back.y == ds.y);
  CHECK(back.seed == ds.seed);
  CHECK(back.gaussian.has_value());
  CHECK(bitwise_equal(back.gaussian->sigma, ds.gaussian->sigma));
  CHECK(back.outcome.beta == ds.outcome.beta);
  CHECK(back.outcome.noise_sd == ds.outcome.noise_sd);
}

TEST_CASE("masked dataset persistence keeps the mechanism exactly") {
  const auto dir = temp_dir("masked_io");
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(6, 0.5, 150, 8));
  Rng rng(9);
  const MaskedDataset md = apply_mar_logistic(ds, 0.4, rng);
  const std::string path = (dir / "masked.msbc").string();
  save_masked_dataset(md, path);
  const MaskedDataset back = load_masked_dataset(path);
  CHECK(bitwise_equal(back.mask, md.mask));
  CHECK(back.y == md.y);
  for (std::size_t i = 0; i < md.xtilde.size(); ++i) {
    if (is_na(md.xtilde[i])) {
      CHECK(is_na(back.xtilde[i]));
    } else {
      CHECK(back.xtilde[i] == md.xtilde[i]);
    }
  }
  REQUIRE(back.mechanism.has_value());
  CHECK(spec_equal(*back.mechanism, *md.mechanism));
  // Round-tripped parameters are bit-exact, so a re-application under the
  // same stream reproduces the mask.
  Rng apply_a(10), apply_b(10);
  const MaskedDataset ma = apply_mechanism(*md.mechanism, ds, apply_a);
  const MaskedDataset mb = apply_mechanism(*back.mechanism, ds, apply_b);
  CHECK(bitwise_equal(ma.mask, mb.mask));
}

TEST_CASE("mechanism JSON survives a round trip for every kind") {
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(5, 0.7, 500, 11));
  Rng rng(12);
  std::vector<MechanismSpec> specs;
  specs.push_back(draw_mcar_spec(0.3));
  Rng r1 = rng.fork("a");
  specs.push_back(draw_mar_logistic_spec(*ds, 0.4, r1));
  specs.push_back(draw_selfmask_spec(*ds, 0.35, 2.0));
  Rng r2 = rng.fork("b");
  specs.push_back(draw_mar_y_spec(*ds, 0.25, 1.5, r2));
  for (const MechanismSpec& spec : specs) {
    const MechanismSpec back = mechanism_from_json(mechanism_to_json(spec));
    CHECK(spec_equal(back, spec));
    CHECK(back.kind == spec.kind);
    CHECK(back.rate == spec.rate);
  }
}

TEST_CASE("estimators reload with identical predictions") {
  const auto dir = temp_dir("estimator_io");
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(4, 0.7, 600, 13));
  Rng rng(14);
  const MaskedDataset md = apply_mcar(ds, 0.4, rng);
  const MaskedDataset train = md.take_rows(0, 400);
  const MaskedDataset val = md.take_rows(400, 500);
  const MaskedDataset test = md.take_rows(500, 600);

  FitOptions opt;
  opt.train.max_epochs = 3;
  opt.mlp_width = 8;
  opt.n_blocks = 2;
  opt.n_imp = 2;

  for (const std::string name : {"mean", "bayes", "prob_oracle", "ice", "mice", "neumise"}) {
    const auto model = fit_estimator(name, train, val, opt, Rng(15));
    const std::string path = (dir / (name + ".msbc")).string();
    model->save(path);
    const auto back = load_estimator(path);
    CHECK(back->name() == model->name());
    CHECK(back->state_hash() == model->state_hash());
    const auto pred_a = model->predict(test);
    const auto pred_b = back->predict(test);
    REQUIRE(pred_a.size() == pred_b.size());
    for (std::size_t i = 0; i < pred_a.size(); ++i) CHECK(pred_a[i] == pred_b[i]);
  }
}

TEST_CASE("state hash is stable across predictions") {
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(4, 0.7, 400, 16));
  Rng rng(17);
  const MaskedDataset md = apply_mcar(ds, 0.3, rng);
  const MaskedDataset train = md.take_rows(0, 250);
  const MaskedDataset val = md.take_rows(250, 320);
  const MaskedDataset test = md.take_rows(320, 400);
  FitOptions opt;
  opt.train.max_epochs = 2;
  opt.mlp_width = 8;
  const auto model = fit_estimator("ice", train, val, opt, Rng(18));
  const std::uint64_t before = model->state_hash();
  (void)model->predict(test);
  (void)model->predict(test);
  CHECK(model->state_hash() == before);
}

TEST_CASE("config parsing, serialization and validation") {
  const std::string json_text = R"({
    "version": 1,
    "master_seed": 7,
    "output_dir": "outdir",
    "dataset": {"kind": "simulated", "d": 6, "lambda": 0.3},
    "mechanism": {"kind": "selfmask", "selfmask_tilt": 2.0},
    "rates": {"source": 0.5, "targets": [0.25, 0.0]},
    "sizes": {"train": 1000, "val": 100, "test": 100},
    "repetitions": 3,
    "estimators": ["bayes", "ice"],
    "fit": {"learning_rate": 0.005, "mlp_width": 32, "neumise_stats": "zero_filled"},
    "grid": {"enabled": false}
  })";
  const ExperimentConfig cfg = parse_experiment_config(json_text);
  CHECK(cfg.master_seed == 7);
  CHECK(cfg.dataset.d == 6);
  CHECK(cfg.mechanism.kind == MechanismKind::kSelfMask);
  CHECK(cfg.target_rates.size() == 2);
  CHECK(cfg.fit.train.learning_rate == 0.005);
  CHECK_FALSE(cfg.fit.neumise_observed_stats);

  // Round trip through the emitter.
  const ExperimentConfig back = parse_experiment_config(experiment_config_to_json(cfg));
  CHECK(back.master_seed == cfg.master_seed);
  CHECK(back.fit.train.learning_rate == cfg.fit.train.learning_rate);

  CHECK_THROWS_AS(parse_experiment_config("{\"version\": 2}"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("{\"surprise\": 1}"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("not json"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"rates": {"source": 1.5, "targets": []}})"),
                  ConfigError);
}

TEST_CASE("result store writes the pinned header and round-trips records") {
  const auto dir = temp_dir("store");
  const std::string path = (dir / "results.csv").string();
  ResultStore store(path);
  ResultRecord r;
  r.scenario = "s1";
  r.estimator = "mean";
  r.environment = "source";
  r.rep = 3;
  r.mse = 1.25;
  r.bayes_mse = 1.0;
  r.seed = 42;
  r.wall_ms = 12.5;
  r.status = "ok";
  store.append(r);
  ResultRecord bad = r;
  bad.mse = std::nan("");
  bad.bayes_mse.reset();
  bad.status = "error: exploded, badly";
  store.append(bad);

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "scenario,estimator,environment,rep,mse,bayes_mse,delta,seed,wall_ms,status");
  std::string row;
  std::getline(in, row);
  CHECK(row.find("s1,mean,source,3,1.25,1,0.25,42,12.5,ok") == 0);

  const auto records = ResultStore::read(path);
  REQUIRE(records.size() == 2);
  CHECK(records[0].mse == 1.25);
  CHECK(records[0].bayes_mse.has_value());
  CHECK(std::isnan(records[1].mse));
  CHECK(records[1].status == "error: exploded; badly");  // commas sanitized
}

TEST_CASE("scenario construction is deterministic and isolates environments") {
  ExperimentConfig cfg = tiny_config("unused");
  cfg.mechanism.kind = MechanismKind::kMarLogistic;
  const Scenario a = build_scenario(cfg, 0);
  const Scenario b = build_scenario(cfg, 0);
  CHECK(bitwise_equal(a.source_train.mask, b.source_train.mask));
  CHECK(bitwise_equal(a.arms[0].test.mask, b.arms[0].test.mask));
  CHECK(bitwise_equal(a.source_test.mask, b.source_test.mask));

  // Fresh parameters per environment.
  CHECK_FALSE(spec_equal(a.source_spec, a.arms[0].spec));
  // A different repetition re-simulates everything.
  const Scenario c = build_scenario(cfg, 1);
  CHECK_FALSE(bitwise_equal(a.source_train.mask, c.source_train.mask));

  CHECK(a.source_train.rows() == cfg.sizes.train);
  CHECK(a.source_val.rows() == cfg.sizes.val);
  CHECK(a.source_test.rows() == cfg.sizes.test);
  CHECK(a.source_bayes_mse.has_value());
}

TEST_CASE("rate-zero arms evaluate on complete data") {
  ExperimentConfig cfg = tiny_config("unused2");
  cfg.target_rates = {0.0};
  const Scenario sc = build_scenario(cfg, 0);
  CHECK(sc.arms[0].shifted_environment == "complete");
  CHECK(sum(sc.arms[0].test.mask) == 0.0);
  // On complete data the analytic reference is the noiseless-truth risk.
  REQUIRE(sc.arms[0].bayes_mse.has_value());
  std::vector<double> truth(sc.arms[0].test.rows());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = wave_noiseless(sc.arms[0].test.x_complete, i, sc.arms[0].test.outcome);
  }
  CHECK(*sc.arms[0].bayes_mse ==
        doctest::Approx(empirical_bayes_risk(truth, sc.arms[0].test.y)));
}

TEST_CASE("run produces one record per estimator, environment and repetition") {
  const auto dir = temp_dir("run_counting");
  ExperimentConfig cfg = tiny_config((dir / "out").string());
  const auto records = run_experiment(cfg);
  // 2 reps x 3 estimators x (source + shifted + no-shift) = 18 rows.
  CHECK(records.size() == 18);
  std::map<std::string, int> by_env;
  for (const auto& r : records) {
    by_env[r.environment] += 1;
    CHECK(r.status == "ok");
    CHECK(r.mse >= 0.0);
  }
  CHECK(by_env["source"] == 6);
  CHECK(by_env["target-shifted"] == 6);
  CHECK(by_env["target-noshift"] == 6);

  const auto from_disk = ResultStore::read((dir / "out" / "results.csv").string());
  CHECK(from_disk.size() == records.size());
  CHECK(std::filesystem::exists(dir / "out" / "config.json"));
}

TEST_CASE("an empty estimator list runs to completion with no records") {
  const auto dir = temp_dir("run_empty");
  ExperimentConfig cfg = tiny_config((dir / "out").string());
  cfg.estimators = {};
  const auto records = run_experiment(cfg);
  CHECK(records.empty());
}

TEST_CASE("unknown estimators are rejected up front") {
  const auto dir = temp_dir("run_unknown");
  ExperimentConfig cfg = tiny_config((dir / "out").string());
  cfg.estimators = {"definitely_not_registered"};
  CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
}

TEST_CASE("inapplicable estimators get explicit status rows") {
  const auto dir = temp_dir("run_inapplicable");
  ExperimentConfig cfg = tiny_config((dir / "out").string());
  cfg.mechanism.kind = MechanismKind::kMarY;  // no analytic route
  cfg.estimators = {"bayes", "mean"};
  cfg.repetitions = 1;
  const auto records = run_experiment(cfg);
  int inapplicable = 0, ok = 0;
  for (const auto& r : records) {
    if (r.estimator == "bayes") {
      CHECK(r.status == "inapplicable");
      ++inapplicable;
    } else {
      CHECK(r.status == "ok");
      ++ok;
    }
  }
  CHECK(inapplicable == 3);
  CHECK(ok == 3);
}

TEST_CASE("rerunning a config reproduces every MSE value") {
  const auto dir = temp_dir("run_repro");
  ExperimentConfig cfg = tiny_config((dir / "a").string());
  cfg.estimators = {"mean", "bayes", "ice"};
  cfg.repetitions = 1;
  const auto first = run_experiment(cfg);
  cfg.output_dir = (dir / "b").string();
  const auto second = run_experiment(cfg);

  auto key = [](const ResultRecord& r) {
    return r.scenario + "|" + r.estimator + "|" + r.environment + "|" + std::to_string(r.rep);
  };
  std::map<std::string, double> lookup;
  for (const auto& r : first) lookup[key(r)] = r.mse;
  REQUIRE(second.size() == first.size());
  for (const auto& r : second) {
    REQUIRE(lookup.count(key(r)) == 1);
    const double a = lookup[key(r)];
    CHECK(std::memcmp(&a, &r.mse, sizeof(double)) == 0);
  }
}

TEST_CASE("environment overrides for workers and output root") {
  ExperimentConfig cfg = tiny_config("nested/out");
  setenv("MISSHIFT_WORKERS", "3", 1);
  CHECK(resolve_workers(cfg) == 3);
  unsetenv("MISSHIFT_WORKERS");
  cfg.workers = 5;
  CHECK(resolve_workers(cfg) == 5);

  setenv("MISSHIFT_OUTPUT_ROOT", "/tmp/misshift_root", 1);
  CHECK(resolve_output_dir(cfg) == "/tmp/misshift_root/nested/out");
  unsetenv("MISSHIFT_OUTPUT_ROOT");
  CHECK(resolve_output_dir(cfg) == "nested/out");
}

TEST_CASE("report aggregates, joins baselines and draws figures") {
  const auto dir = temp_dir("report");
  ExperimentConfig cfg = tiny_config((dir / "out").string());
  cfg.estimators = {"mean", "truth", "bayes"};
  const auto records = run_experiment(cfg);

  // Baseline = the estimator itself: all deltas vanish.
  const auto self_rows = summarize_results(records, "mean");
  for (const auto& row : self_rows) {
    if (row.estimator == "mean") {
      CHECK(row.delta_mean == 0.0);
      CHECK(row.delta_sd == 0.0);
    }
  }

  // Independent spreadsheet-style pass over the raw CSV.
  const auto rows = summarize_results(records, "bayes");
  std::map<std::string, std::pair<double, int>> recomputed;
  for (const auto& r : records) {
    if (r.status != "ok" || !r.bayes_mse.has_value()) continue;
    auto& cell = recomputed[r.scenario + "|" + r.estimator + "|" + r.environment];
    cell.first += r.mse - *r.bayes_mse;
    cell.second += 1;
  }
  for (const auto& row : rows) {
    const auto& cell = recomputed.at(row.scenario + "|" + row.estimator + "|" + row.environment);
    CHECK(std::fabs(row.delta_mean - cell.first / cell.second) < 1e-12);
  }

  // truth (the complete-data predictor) as baseline; and figures on disk.
  const auto written = write_report(records, "complete-data-predictor", (dir / "rep").string());
  CHECK(written.size() >= 2);
  for (const auto& path : written) {
    CHECK(std::filesystem::exists(path));
    CHECK(std::filesystem::file_size(path) > 100);
  }

  // A baseline with no records errors by name.
  CHECK_THROWS_AS(summarize_results(records, "neumiss"), ContractError);
}
