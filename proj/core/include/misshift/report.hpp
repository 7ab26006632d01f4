#pragma once

#include <string>
#include <vector>

#include "misshift/io.hpp"

namespace misshift {

struct SummaryRow {
  std::string scenario;
  std::string estimator;
  std::string environment;
  std::size_t n = 0;  // repetitions with ok status
  double mse_mean = 0.0;
  double mse_sd = 0.0;
  double delta_mean = 0.0;
  double delta_sd = 0.0;
};

// Per (scenario, estimator, environment): mean and standard deviation of the
// test MSE over repetitions, and of the delta against the baseline.
// baseline is "bayes" (the per-record analytic reference column),
// "complete-data-predictor" (alias "truth", joined per repetition), or any
// estimator name joined on (scenario, environment, repetition). Missing
// baseline records raise an error naming the gap.
std::vector<SummaryRow> summarize_results(const std::vector<ResultRecord>& records,
                                          const std::string& baseline);

// Writes summary.csv and one box/strip chart of MSE deltas per scenario
// (SVG). Returns the paths written.
std::vector<std::string> write_report(const std::vector<ResultRecord>& records,
                                      const std::string& baseline,
                                      const std::string& output_dir);

}  // namespace misshift
