#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "misshift/matrix.hpp"
#include "misshift/rng.hpp"

namespace misshift {

// Covariate model X ~ N(mu, Sigma) with Sigma = B B^T plus a small diagonal
// jitter. Lower lambda means fewer factor columns and higher correlation.
struct GaussianParams {
  std::size_t d = 0;
  double lambda = 1.0;
  std::vector<double> mu;
  Matrix sigma;   // d x d, jitter included
  Matrix factor;  // d x ceil(lambda * d)
  double jitter = 0.0;
};

struct WaveTerm {
  double amplitude = 0.0;
  double offset = 0.0;
};

// Outcome y = h(x) + eps where h is affine in the index z = x beta + beta0
// plus a sum of Gaussian-cdf waves:
//   h(z) = (z - 1) + sum_i a_i * Phi(curvature * (z + b_i)).
struct OutcomeParams {
  std::vector<double> beta;
  double beta0 = 0.0;
  double curvature = 0.0;
  std::vector<WaveTerm> waves;
  double noise_sd = 0.0;
};

struct Dataset {
  Matrix x;
  std::vector<double> y;
  std::optional<GaussianParams> gaussian;  // absent for ingested tables
  OutcomeParams outcome;
  std::uint64_t seed = 0;
  std::string origin = "simulated";
};

inline constexpr double kWaveCurvature = 12.533141373155003;  // 20 * sqrt(pi / 8)
inline constexpr double kSignalToNoise = 10.0;
inline constexpr std::size_t kNoiseCalibrationDraws = 100000;

std::vector<WaveTerm> default_wave_terms();

GaussianParams make_gaussian_params(std::size_t d, double lambda, Rng& rng);

// Rows i.i.d. N(mu, Sigma), drawn as mu + L z with L the Cholesky factor.
Matrix sample_covariates(const GaussianParams& gp, std::size_t n, Rng& rng);

// Coefficients of ones rescaled so var(x beta) = 1 under gp, the default
// wave set, and beta0 centering the index at zero. noise_sd is left at zero
// until calibrate_noise runs.
OutcomeParams make_wave_outcome_params(const GaussianParams& gp);

double wave_value(double index, const OutcomeParams& op);
double wave_index(const Matrix& x, std::size_t row, const OutcomeParams& op);
double wave_noiseless(const Matrix& x, std::size_t row, const OutcomeParams& op);

std::vector<double> wave_outcome(const Matrix& x, const OutcomeParams& op, Rng& rng);

// Sets op.noise_sd so var(h) / noise_sd^2 equals kSignalToNoise, using a
// fresh Monte-Carlo estimate of var(h) independent of any training sample.
// Throws ContractError when h is (numerically) constant.
double calibrate_noise(const GaussianParams& gp, OutcomeParams& op, Rng& rng);

Dataset make_simulated_dataset(std::size_t d, double lambda, std::size_t n,
                               std::uint64_t seed);

enum class ColumnKind { kContinuous, kBinary };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::kContinuous;
};

// Reads a comma-delimited table with a header row. Missing cells are empty
// fields or the literal "NA"; rows containing any missing or unparseable
// cell are dropped. Continuous columns are z-scored with complete-case
// statistics, binary columns are kept as 0/1, and a synthetic wave outcome
// is attached using coefficients rescaled by the empirical covariance.
Dataset ingest_table(const std::string& path, const std::vector<ColumnSpec>& schema,
                     std::uint64_t seed);

}  // namespace misshift
