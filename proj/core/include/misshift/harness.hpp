#pragma once

#include <optional>
#include <string>
#include <vector>

#include "misshift/config.hpp"
#include "misshift/estimator.hpp"
#include "misshift/io.hpp"
#include "misshift/missingness.hpp"

namespace misshift {

// One repetition of one experiment: a single underlying complete dataset,
// masked independently per environment. The source environment carries the
// source-rate masking; each target arm carries a freshly parameterized
// mechanism at its target rate, shared by the shifted evaluation and the
// no-shift control trained directly in that environment.
struct TargetArm {
  double rate = 0.0;
  std::string scenario_id;
  std::string shifted_environment;  // "target-shifted", or "complete" at rate 0
  MechanismSpec spec;
  MaskedDataset train, val, test;
  std::optional<double> bayes_mse;  // analytic reference on this arm's test split
};

struct Scenario {
  std::size_t rep = 0;
  std::string source_id;
  MechanismSpec source_spec;
  MaskedDataset source_train, source_val, source_test;
  std::optional<double> source_bayes_mse;
  std::vector<TargetArm> arms;
};

Scenario build_scenario(const ExperimentConfig& cfg, std::size_t rep);

// Runs the full grid (repetitions x estimators), appending one record per
// (estimator, environment, repetition) cell to <output_dir>/results.csv.
// Individual estimator failures become error-status rows; the rest of the
// grid continues. Returns everything appended.
std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg);

// Resolved output directory after the MISSHIFT_OUTPUT_ROOT override.
std::string resolve_output_dir(const ExperimentConfig& cfg);

// Worker count after the MISSHIFT_WORKERS override (at least 1).
std::size_t resolve_workers(const ExperimentConfig& cfg);

}  // namespace misshift
