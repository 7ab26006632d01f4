// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line with its elapsed time. Criteria 7 and 8 run desk-scale experiment
// grids end to end through the harness.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>

#include "misshift/analytic.hpp"
#include "misshift/config.hpp"
#include "misshift/datagen.hpp"
#include "misshift/estimator.hpp"
#include "misshift/harness.hpp"
#include "misshift/imputers.hpp"
#include "misshift/io.hpp"
#include "misshift/linalg.hpp"
#include "misshift/missingness.hpp"
#include "misshift/neural.hpp"
#include "support/oracles.hpp"

using namespace misshift;

namespace {

class CriterionTimer {
 public:
  explicit CriterionTimer(std::string label) : label_(std::move(label)) {
    start_ = std::chrono::steady_clock::now();
  }
  double elapsed_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  void report(bool pass) const {
    std::printf("[ACCEPTANCE] %s: %s (%.1f s)\n", label_.c_str(), pass ? "PASS" : "FAIL",
                elapsed_s());
    std::fflush(stdout);
  }

 private:
  std::string label_;
  std::chrono::steady_clock::time_point start_;
};

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal(0.0, sd);
  return m;
}

std::filesystem::path accept_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("misshift_accept_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct Cell {
  std::map<long, double> by_rep;
};

// records indexed by (scenario, estimator, environment).
std::map<std::string, Cell> index_records(const std::vector<ResultRecord>& records) {
  std::map<std::string, Cell> out;
  for (const ResultRecord& r : records) {
    if (r.status != "ok") continue;
    out[r.scenario + "|" + r.estimator + "|" + r.environment].by_rep[r.rep] = r.mse;
  }
  return out;
}

std::vector<double> paired_diffs(const Cell& a, const Cell& b) {
  std::vector<double> out;
  for (const auto& [rep, mse] : a.by_rep) {
    auto it = b.by_rep.find(rep);
    if (it != b.by_rep.end()) out.push_back(mse - it->second);
  }
  return out;
}

double mean_of(const std::vector<double>& v) { return testing::sample_mean(v); }

double se_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v), acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

TEST_CASE("criterion 1: reverse-mode gradients match finite differences") {
  CriterionTimer timer("C1 gradient-correctness");
  bool pass = true;
  const std::size_t d = 6, n_blocks = 3;
  Rng master(1001);
  for (const ArchKind kind : {ArchKind::kMlp, ArchKind::kNeumiss, ArchKind::kNeumise}) {
    for (int graph = 0; graph < 20; ++graph) {
      Rng rng = master.fork(arch_kind_name(kind) + "-" + std::to_string(graph));
      NeuralNet net = make_network(kind, d, 8, 1, n_blocks, true, rng);
      net.bn_state.track_running = false;
      if (kind == ArchKind::kNeumiss) net.mu = random_matrix(1, d, rng, 0.5);

      const std::size_t batch = 6;
      Matrix mask(batch, d, 0.0);
      if (kind != ArchKind::kMlp) {
        for (std::size_t i = 0; i < mask.size(); ++i) {
          mask[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        }
      }
      Matrix x = random_matrix(batch, d, rng);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (mask[i] == 1.0) x[i] = 0.0;
      }
      const Matrix y = random_matrix(batch, 1, rng);

      std::vector<Matrix*> param_ptrs = collect_params(net);
      std::vector<Matrix> params;
      for (Matrix* p : param_ptrs) params.push_back(*p);

      auto loss_of = [&](const std::vector<Matrix>& p) {
        for (std::size_t k = 0; k < param_ptrs.size(); ++k) *param_ptrs[k] = p[k];
        Tape tape;
        const ForwardBindings fb = network_forward(tape, net, x, mask, false);
        Value loss = tape.mse_loss(fb.output, tape.constant(y));
        return tape.scalar(loss);
      };

      Tape tape;
      const ForwardBindings fb = network_forward(tape, net, x, mask, true);
      Value loss = tape.mse_loss(fb.output, tape.constant(y));
      auto [lv, grads] = forward_backward(tape, loss, fb.params);
      (void)lv;
      const auto fd = testing::finite_difference_gradients(params, loss_of);
      const double err = testing::max_gradient_rel_error(grads, fd);
      pass = pass && err < 1e-4;
      CHECK(err < 1e-4);
      loss_of(params);  // restore
    }
  }
  const bool in_time = timer.elapsed_s() < 60.0;
  CHECK(in_time);
  timer.report(pass && in_time);
}

TEST_CASE("criterion 2: the MAR predictor is bitwise invariant to the generating mechanism") {
  CriterionTimer timer("C2 shift-invariance");
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(8, 0.7, 6000, 1002));
  Rng rng(1003);
  const MaskedDataset test = apply_mcar(ds, 0.5, rng).take_rows(4000, 6000);

  Rng r1(1004), r2(1005), r3(1006);
  const MaskedDataset train_mcar50 = apply_mcar(ds, 0.5, r1).take_rows(0, 4000);
  const MaskedDataset train_mcar25 = apply_mcar(ds, 0.25, r2).take_rows(0, 4000);
  const MaskedDataset train_mar50 = apply_mar_logistic(ds, 0.5, r3).take_rows(0, 4000);

  FitOptions opt;
  const auto model_a = fit_estimator("bayes", train_mcar50, train_mcar50, opt, Rng(1));
  const auto model_b = fit_estimator("bayes", train_mcar25, train_mcar25, opt, Rng(2));
  const auto model_c = fit_estimator("bayes", train_mar50, train_mar50, opt, Rng(3));

  const auto pa = model_a->predict(test);
  const auto pb = model_b->predict(test);
  const auto pc = model_c->predict(test);
  bool pass = pa.size() == pb.size() && pa.size() == pc.size();
  for (std::size_t i = 0; i < pa.size() && pass; ++i) {
    pass = std::memcmp(&pa[i], &pb[i], sizeof(double)) == 0 &&
           std::memcmp(&pa[i], &pc[i], sizeof(double)) == 0;
  }
  CHECK(pass);
  timer.report(pass);
}

TEST_CASE("criterion 3: analytic predictors agree with stochastic oracles") {
  CriterionTimer timer("C3 oracle-agreement");
  bool pass = true;
  const std::size_t d = 10, n_draws = 1000000;
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(d, 0.7, 200, 1007));
  const GaussianParams& gp = *ds->gaussian;
  const OutcomeParams& op = ds->outcome;
  Rng mask_rng(1008);

  auto random_row = [&](std::size_t i) {
    std::vector<double> row(d);
    bool any = false;
    do {
      any = false;
      for (std::size_t j = 0; j < d; ++j) {
        row[j] = mask_rng.uniform() < 0.5 ? na_value() : ds->x(i, j);
        any = any || is_na(row[j]);
      }
    } while (!any);
    return row;
  };

  // MAR route vs plain Monte-Carlo over the conditional.
  {
    AnalyticEngine engine(gp, op);
    Rng draw_rng(1009);
    for (std::size_t i = 0; i < 25; ++i) {
      const std::vector<double> row = random_row(i);
      const double analytic = engine.bayes_mar(row);
      const ConditionalGaussian cg = engine.conditional(row);
      const Matrix chol = cholesky_factor(cg.cov);
      std::vector<double> z(cg.mean.size());
      std::vector<double> filled = row;
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t t = 0; t < n_draws; ++t) {
        for (double& v : z) v = draw_rng.normal();
        for (std::size_t a = 0; a < cg.mean.size(); ++a) {
          double v = cg.mean[a];
          for (std::size_t b = 0; b <= a; ++b) v += chol(a, b) * z[b];
          filled[cg.missing_cols[a]] = v;
        }
        double idx = op.beta0;
        for (std::size_t j = 0; j < d; ++j) idx += filled[j] * op.beta[j];
        const double h = wave_value(idx, op);
        s1 += h;
        s2 += h * h;
      }
      const double nd = static_cast<double>(n_draws);
      const double mc = s1 / nd;
      const double se = std::sqrt(std::max(0.0, s2 / nd - mc * mc) / nd);
      const bool ok = std::fabs(analytic - mc) <= 3.0 * se;
      pass = pass && ok;
      CHECK(ok);
    }
  }

  // Self-masking route vs self-normalized importance sampling.
  {
    const MechanismSpec spec = draw_selfmask_spec(*ds, 0.5, 2.0);
    AnalyticEngine engine(gp, op, spec.selfmask);
    AnalyticEngine proposal(gp, op);
    Rng draw_rng(1010);
    for (std::size_t i = 0; i < 25; ++i) {
      const std::vector<double> row = random_row(25 + i);
      const double analytic = engine.bayes_selfmask(row);
      const ConditionalGaussian cg = proposal.conditional(row);
      const Matrix chol = cholesky_factor(cg.cov);
      std::vector<double> z(cg.mean.size());
      std::vector<double> filled = row;
      std::vector<double> ws(n_draws), hs(n_draws);
      double wsum = 0.0, hsum = 0.0;
      for (std::size_t t = 0; t < n_draws; ++t) {
        for (double& v : z) v = draw_rng.normal();
        double logw = 0.0;
        for (std::size_t a = 0; a < cg.mean.size(); ++a) {
          double v = cg.mean[a];
          for (std::size_t b = 0; b <= a; ++b) v += chol(a, b) * z[b];
          const std::size_t col = cg.missing_cols[a];
          filled[col] = v;
          const double u = (v - spec.selfmask.mu_tilde[col]) / spec.selfmask.sigma_tilde[col];
          logw -= 0.5 * u * u;
        }
        double idx = op.beta0;
        for (std::size_t j = 0; j < d; ++j) idx += filled[j] * op.beta[j];
        ws[t] = std::exp(logw);
        hs[t] = wave_value(idx, op);
        wsum += ws[t];
        hsum += ws[t] * hs[t];
      }
      const double est = hsum / wsum;
      double se2 = 0.0;
      for (std::size_t t = 0; t < n_draws; ++t) {
        const double rterm = ws[t] * (hs[t] - est);
        se2 += rterm * rterm;
      }
      const double se = std::sqrt(se2) / wsum;
      const bool ok = std::fabs(analytic - est) <= 3.0 * se;
      pass = pass && ok;
      CHECK(ok);
    }
  }
  const bool in_time = timer.elapsed_s() < 300.0;
  CHECK(in_time);
  timer.report(pass && in_time);
}

TEST_CASE("criterion 4: every mechanism calibrates to its target rate") {
  CriterionTimer timer("C4 mechanism-calibration");
  bool pass = true;
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(10, 0.7, 100000, 1011));
  std::uint64_t seed = 2000;
  for (const double rate : {0.25, 0.5}) {
    for (const MechanismKind kind :
         {MechanismKind::kMcar, MechanismKind::kMarLogistic, MechanismKind::kSelfMask,
          MechanismKind::kMarY}) {
      Rng rng(++seed);
      MaskedDataset md;
      switch (kind) {
        case MechanismKind::kMcar: md = apply_mcar(ds, rate, rng); break;
        case MechanismKind::kMarLogistic: md = apply_mar_logistic(ds, rate, rng); break;
        case MechanismKind::kSelfMask: md = apply_selfmask(ds, rate, 2.0, rng); break;
        case MechanismKind::kMarY: md = apply_mar_y(ds, rate, rng); break;
      }
      const double err = std::fabs(empirical_missing_rate(md) - rate);
      pass = pass && err <= 0.01;
      CHECK(err <= 0.01);

      if (kind == MechanismKind::kSelfMask) {
        for (std::size_t j = 0; j < md.dim(); ++j) {
          double masked = 0.0, nm = 0.0, observed = 0.0, no = 0.0;
          for (std::size_t i = 0; i < md.rows(); ++i) {
            if (md.mask(i, j) == 1.0) {
              masked += ds->x(i, j);
              nm += 1.0;
            } else {
              observed += ds->x(i, j);
              no += 1.0;
            }
          }
          const bool informative = masked / nm > observed / no;
          pass = pass && informative;
          CHECK(informative);
        }
      }
    }
  }
  const bool in_time = timer.elapsed_s() < 60.0;
  CHECK(in_time);
  timer.report(pass && in_time);
}

TEST_CASE("criterion 5: chained-equations imputations track the analytic conditionals") {
  CriterionTimer timer("C5 ice-fidelity");
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(5, 0.7, 50000, 1012));
  Rng rng(1013);
  const MaskedDataset md = apply_mcar(ds, 0.3, rng);
  const IceModel model = ice_fit(md, IceFlags{}, 10);
  Rng rng2(1014);
  const Matrix completed = ice_transform(model, md, rng2, 1)[0];

  AnalyticEngine engine(*ds->gaussian, ds->outcome);
  std::vector<double> ref, got;
  for (std::size_t i = 0; i < md.rows(); ++i) {
    const std::vector<double> row = masked_row(md, i);
    bool any = false;
    for (double v : row) any = any || is_na(v);
    if (!any) continue;
    const ConditionalGaussian cg = engine.conditional(row);
    for (std::size_t a = 0; a < cg.missing_cols.size(); ++a) {
      ref.push_back(cg.mean[a]);
      got.push_back(completed(i, cg.missing_cols[a]));
    }
  }
  const double mean_ref = testing::sample_mean(ref);
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k) {
    ss_tot += (ref[k] - mean_ref) * (ref[k] - mean_ref);
    ss_res += (ref[k] - got[k]) * (ref[k] - got[k]);
  }
  const double r2 = 1.0 - ss_res / ss_tot;
  const bool pass = r2 > 0.95;
  CHECK(pass);
  const bool in_time = timer.elapsed_s() < 300.0;
  CHECK(in_time);
  timer.report(pass && in_time);
}

TEST_CASE("criterion 6: embedding identities") {
  CriterionTimer timer("C6 embedding-identities");
  bool pass = true;
  Rng rng(1015);

  // Exact pass-through of fully observed rows for arbitrary weights.
  {
    const std::size_t d = 7, n = 9;
    NeuralNet net = make_network(ArchKind::kNeumise, d, 4, 1, 5, true, rng);
    net.entry = random_matrix(d, d, rng);
    net.recur = random_matrix(d, d, rng);
    net.bn_gamma = random_matrix(1, d, rng);
    net.bn_beta = random_matrix(1, d, rng);
    net.bn_state.track_running = false;
    Matrix mask(n, d, 0.0);
    for (std::size_t i = 3; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) mask(i, j) = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    Matrix x = random_matrix(n, d, rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (mask[i] == 1.0) x[i] = 0.0;
    }
    Tape tape;
    const ForwardBindings fb = network_embed(tape, net, x, mask, false);
    const Matrix& out = tape.value(fb.output);

    Tape ref_tape;
    BatchNormState bn_copy = net.bn_state;
    Value bn = ref_tape.batch_norm(ref_tape.constant(x), ref_tape.constant(net.bn_gamma),
                                   ref_tape.constant(net.bn_beta), bn_copy, &mask);
    const Matrix& normalized = ref_tape.value(bn);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const bool exact = out(i, j) == normalized(i, j);
        pass = pass && exact;
        CHECK(exact);
      }
    }
  }

  // Neumann approximation of the inverse covariance, geometric error decay.
  {
    const std::size_t d = 6;
    Matrix a = random_matrix(d, d, rng);
    Matrix q(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) q(i, j) = 0.5 * (a(i, j) + a(j, i));
    Matrix v = random_matrix(d, 1, rng);
    double lambda = 1.0;
    for (int it = 0; it < 200; ++it) {
      v = matmul(q, v);
      lambda = frobenius_norm(v);
      v = scale(v, 1.0 / lambda);
    }
    q = scale(q, 0.5 / lambda);  // ||I - Sigma||_2 = 0.5
    Matrix sigma = Matrix::identity(d);
    for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] -= q[i];

    const Matrix x = random_matrix(2, d, rng);
    const Matrix target = transpose(cholesky_solve(sigma, transpose(x)));
    std::vector<double> errors;
    for (std::size_t blocks = 0; blocks <= 10; ++blocks) {
      NeuralNet net = make_network(ArchKind::kNeumiss, d, 4, 1, blocks, true, rng);
      net.mu = Matrix(1, d, 0.0);
      net.entry = q;
      net.recur = q;
      Tape tape;
      const ForwardBindings fb = network_embed(tape, net, x, Matrix(2, d, 0.0), false);
      errors.push_back(max_abs(sub(tape.value(fb.output), target)));
    }
    for (std::size_t k = 3; k + 1 < errors.size(); ++k) {
      const double ratio = errors[k + 1] / errors[k];
      const bool geometric = ratio > 0.3 && ratio < 0.7;
      pass = pass && geometric;
      CHECK(geometric);
    }
  }
  CHECK(pass);
  timer.report(pass);
}

namespace {

ExperimentConfig desk_scale_config(const std::string& out_dir, MechanismKind kind) {
  ExperimentConfig cfg;
  cfg.master_seed = 20240817;
  cfg.output_dir = out_dir;
  cfg.dataset.simulated = true;
  cfg.dataset.d = 10;
  cfg.dataset.lambda = 0.7;
  cfg.mechanism.kind = kind;
  cfg.source_rate = 0.5;
  cfg.target_rates = {0.25};
  cfg.sizes = {20000, 2000, 2000};
  cfg.repetitions = 3;
  cfg.fit.train.max_epochs = 300;
  cfg.fit.train.learning_rate = 5e-3;
  cfg.fit.train.weight_decay = 1e-4;
  cfg.fit.mlp_width = 64;
  cfg.fit.mlp_depth = 1;
  cfg.fit.n_blocks = 10;
  return cfg;
}

}  // namespace

TEST_CASE("criterion 7: desk-scale ignorable shifts") {
  CriterionTimer timer("C7 ignorable-shift-experiment");
  bool pass = true;
  const std::vector<std::string> learned = {"ice", "ice_mask", "mice", "neumiss", "neumise"};
  for (const MechanismKind kind : {MechanismKind::kMcar, MechanismKind::kMarLogistic}) {
    const std::string tag = mechanism_kind_name(kind);
    const auto dir = accept_dir("c7_" + tag);
    ExperimentConfig cfg = desk_scale_config((dir / "out").string(), kind);
    cfg.estimators = {"bayes", "mean", "ice", "ice_mask", "mice", "neumiss", "neumise"};
    const auto records = run_experiment(cfg);
    const auto cells = index_records(records);
    const std::string scenario = "sim-d10-l0.7-" + tag + "-0.50to0.25";

    auto cell = [&](const std::string& estimator, const std::string& env) -> const Cell& {
      const std::string key = scenario + "|" + estimator + "|" + env;
      REQUIRE_MESSAGE(cells.count(key) == 1, "missing cell " << key);
      return cells.at(key);
    };

    // (a) Bayes predictor unaffected by the ignorable shift.
    {
      const auto diffs = paired_diffs(cell("bayes", "target-shifted"),
                                      cell("bayes", "target-noshift"));
      const bool ok = diffs.size() == 3 && std::fabs(mean_of(diffs)) <=
                                               std::max(2.0 * se_of(diffs), 1e-12);
      pass = pass && ok;
      CHECK_MESSAGE(ok, tag << ": bayes shifted-vs-noshift gap " << mean_of(diffs));
    }

    // (b) No learned estimator beats its own no-shift control after a shift.
    for (const std::string& est : learned) {
      const auto diffs = paired_diffs(cell(est, "target-shifted"),
                                      cell(est, "target-noshift"));
      const bool ok = diffs.size() == 3 && mean_of(diffs) >= -2.0 * se_of(diffs);
      pass = pass && ok;
      CHECK_MESSAGE(ok, tag << ": " << est << " shifted beats noshift by " << -mean_of(diffs));
    }

    // (c) The embeddings clearly beat the constant-mean baseline in the
    // no-shift environment.
    {
      double mean_mse = 0.0;
      for (const auto& [rep, mse] : cell("mean", "target-noshift").by_rep) mean_mse += mse;
      mean_mse /= 3.0;
      for (const std::string& est : {std::string("neumiss"), std::string("neumise")}) {
        double est_mse = 0.0;
        for (const auto& [rep, mse] : cell(est, "target-noshift").by_rep) est_mse += mse;
        est_mse /= 3.0;
        const bool ok = est_mse <= 0.7 * mean_mse;
        pass = pass && ok;
        CHECK_MESSAGE(ok, tag << ": " << est << " noshift mse " << est_mse
                              << " vs mean-model " << mean_mse);
      }
    }
  }
  const bool in_time = timer.elapsed_s() < 7200.0;
  CHECK(in_time);
  timer.report(pass && in_time);
}

TEST_CASE("criterion 8: informative outcome-dependent masking trades off under shift") {
  CriterionTimer timer("C8 outcome-masking-tradeoff");
  const auto dir = accept_dir("c8");
  ExperimentConfig cfg = desk_scale_config((dir / "out").string(), MechanismKind::kMarY);
  cfg.mechanism.mar_y_slope_scale = 3.0;  // strong outcome dependence
  cfg.estimators = {"ice_mask", "mice_y"};
  const auto records = run_experiment(cfg);
  const auto cells = index_records(records);
  const std::string scenario = "sim-d10-l0.7-mar_y-0.50to0.25";
  const std::string source_id = "sim-d10-l0.7-mar_y-src0.50";

  auto cell = [&](const std::string& estimator, const std::string& scen,
                  const std::string& env) -> const Cell& {
    const std::string key = scen + "|" + estimator + "|" + env;
    REQUIRE_MESSAGE(cells.count(key) == 1, "missing cell " << key);
    return cells.at(key);
  };

  int mask_wins_source = 0, micey_wins_shift = 0;
  for (long rep = 0; rep < 3; ++rep) {
    const double mask_src = cell("ice_mask", source_id, "source").by_rep.at(rep);
    const double micey_src = cell("mice_y", source_id, "source").by_rep.at(rep);
    if (mask_src < micey_src) ++mask_wins_source;
    const double mask_shift = cell("ice_mask", scenario, "target-shifted").by_rep.at(rep);
    const double micey_shift = cell("mice_y", scenario, "target-shifted").by_rep.at(rep);
    if (micey_shift < mask_shift) ++micey_wins_shift;
  }
  const bool pass = mask_wins_source >= 2 && micey_wins_shift >= 2;
  CHECK_MESSAGE(mask_wins_source >= 2,
                "mask exploits outcome-dependent missingness in " << mask_wins_source << "/3");
  CHECK_MESSAGE(micey_wins_shift >= 2,
                "outcome-blind imputation is more robust in " << micey_wins_shift << "/3");
  const bool in_time = timer.elapsed_s() < 7200.0;
  CHECK(in_time);
  timer.report(pass && in_time);
}

TEST_CASE("criterion 9: rerunning a config byte-reproduces the result store") {
  CriterionTimer timer("C9 reproducibility");
  const auto dir = accept_dir("c9");
  ExperimentConfig cfg;
  cfg.master_seed = 777;
  cfg.output_dir = (dir / "a").string();
  cfg.dataset.simulated = true;
  cfg.dataset.d = 6;
  cfg.dataset.lambda = 0.7;
  cfg.mechanism.kind = MechanismKind::kMarLogistic;
  cfg.source_rate = 0.5;
  cfg.target_rates = {0.25, 0.0};
  cfg.sizes = {2000, 400, 400};
  cfg.repetitions = 2;
  cfg.estimators = {"bayes", "mean", "cond_oracle", "prob_oracle", "ice", "neumise"};
  cfg.fit.train.max_epochs = 20;
  cfg.fit.mlp_width = 16;
  cfg.fit.n_blocks = 4;

  const auto first = run_experiment(cfg);
  cfg.output_dir = (dir / "b").string();
  const auto second = run_experiment(cfg);

  auto key = [](const ResultRecord& r) {
    return r.scenario + "|" + r.estimator + "|" + r.environment + "|" + std::to_string(r.rep);
  };
  std::map<std::string, std::string> formatted;
  for (const auto& r : first) formatted[key(r)] = format_double(r.mse);
  bool pass = first.size() == second.size();
  for (const auto& r : second) {
    pass = pass && formatted.count(key(r)) == 1 && formatted[key(r)] == format_double(r.mse);
  }
  CHECK(pass);

  // The stores on disk carry identical value sets as well.
  const auto rows_a = ResultStore::read((dir / "a" / "results.csv").string());
  const auto rows_b = ResultStore::read((dir / "b" / "results.csv").string());
  CHECK(rows_a.size() == rows_b.size());
  std::map<std::string, double> disk_a;
  for (const auto& r : rows_a) disk_a[key(r)] = r.mse;
  for (const auto& r : rows_b) {
    const double a = disk_a[key(r)];
    const bool same = std::memcmp(&a, &r.mse, sizeof(double)) == 0;
    pass = pass && same;
    CHECK(same);
  }
  timer.report(pass);
}
