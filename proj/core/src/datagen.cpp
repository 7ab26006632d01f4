#include "misshift/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "misshift/errors.hpp"
#include "misshift/linalg.hpp"
#include "misshift/mathfn.hpp"

namespace misshift {

std::vector<WaveTerm> default_wave_terms() {
  return {{2.0, -0.8}, {-4.0, -1.0}, {2.0, -1.2}};
}

GaussianParams make_gaussian_params(std::size_t d, double lambda, Rng& rng) {
  if (d < 1) throw ContractError("make_gaussian_params: d must be at least 1");
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw ContractError("make_gaussian_params: lambda must lie in (0, 1]");
  }
  GaussianParams gp;
  gp.d = d;
  gp.lambda = lambda;
  gp.mu.resize(d);
  for (double& v : gp.mu) v = rng.normal();

  const auto k = static_cast<std::size_t>(
      std::ceil(lambda * static_cast<double>(d)) + 0.5);
  gp.factor = Matrix(d, k);
  for (std::size_t i = 0; i < gp.factor.size(); ++i) gp.factor[i] = rng.normal();
  gp.sigma = matmul_nt(gp.factor, gp.factor);

  // B B^T is rank-deficient whenever k < d; the jitter keeps the Cholesky
  // factorizations downstream well posed.
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += gp.sigma(i, i);
  gp.jitter = 1e-6 * trace / static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) gp.sigma(i, i) += gp.jitter;
  return gp;
}

Matrix sample_covariates(const GaussianParams& gp, std::size_t n, Rng& rng) {
  const Matrix chol = cholesky_factor(gp.sigma);
  const std::size_t d = gp.d;
  Matrix x(n, d);
  std::vector<double> z(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : z) v = rng.normal();
    for (std::size_t r = 0; r < d; ++r) {
      double acc = gp.mu[r];
      for (std::size_t c = 0; c <= r; ++c) acc += chol(r, c) * z[c];
      x(i, r) = acc;
    }
  }
  return x;
}

namespace {

double quadratic_form(const Matrix& sigma, const std::vector<double>& v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) row += sigma(i, j) * v[j];
    acc += v[i] * row;
  }
  return acc;
}

}  // namespace

OutcomeParams make_wave_outcome_params(const GaussianParams& gp) {
  OutcomeParams op;
  op.beta.assign(gp.d, 1.0);
  const double q = quadratic_form(gp.sigma, op.beta);
  if (!(q > 0.0)) throw ContractError("make_wave_outcome_params: degenerate covariance");
  const double s = 1.0 / std::sqrt(q);
  for (double& b : op.beta) b *= s;
  // Center the index so it is standard normal under gp; the waves then sit
  // about one standard deviation above the mean.
  double mb = 0.0;
  for (std::size_t i = 0; i < gp.d; ++i) mb += gp.mu[i] * op.beta[i];
  op.beta0 = -mb;
  op.curvature = kWaveCurvature;
  op.waves = default_wave_terms();
  return op;
}

double wave_value(double index, const OutcomeParams& op) {
  double v = index - 1.0;
  for (const WaveTerm& w : op.waves) {
    v += w.amplitude * normal_cdf(op.curvature * (index + w.offset));
  }
  return v;
}

double wave_index(const Matrix& x, std::size_t row, const OutcomeParams& op) {
  double z = op.beta0;
  for (std::size_t j = 0; j < op.beta.size(); ++j) z += x(row, j) * op.beta[j];
  return z;
}

double wave_noiseless(const Matrix& x, std::size_t row, const OutcomeParams& op) {
  return wave_value(wave_index(x, row, op), op);
}

std::vector<double> wave_outcome(const Matrix& x, const OutcomeParams& op, Rng& rng) {
  std::vector<double> y(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    y[i] = wave_noiseless(x, i, op) + rng.normal(0.0, op.noise_sd);
  }
  return y;
}

double calibrate_noise(const GaussianParams& gp, OutcomeParams& op, Rng& rng) {
  // The index x beta + beta0 is Gaussian with moments known exactly under
  // gp, so the Monte-Carlo draw can be taken on the index scale directly.
  double mean_index = op.beta0;
  for (std::size_t i = 0; i < gp.d; ++i) mean_index += gp.mu[i] * op.beta[i];
  const double sd_index = std::sqrt(quadratic_form(gp.sigma, op.beta));

  double s1 = 0.0, s2 = 0.0;
  const auto n = static_cast<double>(kNoiseCalibrationDraws);
  for (std::size_t i = 0; i < kNoiseCalibrationDraws; ++i) {
    const double h = wave_value(rng.normal(mean_index, sd_index), op);
    s1 += h;
    s2 += h * h;
  }
  const double var = std::max(0.0, s2 / n - (s1 / n) * (s1 / n));
  if (var < 1e-12) {
    throw ContractError("calibrate_noise: outcome function is constant, SNR undefined");
  }
  op.noise_sd = std::sqrt(var / kSignalToNoise);
  return op.noise_sd;
}

Dataset make_simulated_dataset(std::size_t d, double lambda, std::size_t n,
                               std::uint64_t seed) {
  Rng root(seed);
  Rng rng_params = root.fork("gaussian-params");
  Rng rng_noise = root.fork("noise-calibration");
  Rng rng_x = root.fork("covariates");
  Rng rng_y = root.fork("outcome");

  Dataset ds;
  ds.seed = seed;
  ds.origin = "simulated";
  ds.gaussian = make_gaussian_params(d, lambda, rng_params);
  ds.outcome = make_wave_outcome_params(*ds.gaussian);
  calibrate_noise(*ds.gaussian, ds.outcome, rng_noise);
  ds.x = sample_covariates(*ds.gaussian, n, rng_x);
  ds.y = wave_outcome(ds.x, ds.outcome, rng_y);
  return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (std::string& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

bool is_na_token(const std::string& s) { return s.empty() || s == "NA" || s == "na"; }

}  // namespace

Dataset ingest_table(const std::string& path, const std::vector<ColumnSpec>& schema,
                     std::uint64_t seed) {
  if (schema.empty()) throw IngestError("ingest_table: empty schema");
  std::ifstream in(path);
  if (!in) throw IngestError("ingest_table: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw IngestError("ingest_table: missing header row");
  const std::vector<std::string> header = split_csv_line(line);

  std::vector<std::size_t> col_index(schema.size());
  for (std::size_t k = 0; k < schema.size(); ++k) {
    auto it = std::find(header.begin(), header.end(), schema[k].name);
    if (it == header.end()) {
      throw IngestError("ingest_table: column '" + schema[k].name + "' not found in header");
    }
    col_index[k] = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<double> values;
  std::size_t n_rows = 0, n_dropped = 0, line_no = 1;
  std::vector<double> row(schema.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    bool complete = true;
    for (std::size_t k = 0; k < schema.size() && complete; ++k) {
      if (col_index[k] >= cells.size() || is_na_token(cells[col_index[k]])) {
        complete = false;
        break;
      }
      const std::string& tok = cells[col_index[k]];
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') {
        complete = false;
        break;
      }
      if (schema[k].kind == ColumnKind::kBinary && v != 0.0 && v != 1.0) {
        throw IngestError("ingest_table: binary column '" + schema[k].name + "' has value '" +
                          tok + "' at line " + std::to_string(line_no));
      }
      row[k] = v;
    }
    if (!complete) {
      ++n_dropped;
      continue;
    }
    values.insert(values.end(), row.begin(), row.end());
    ++n_rows;
  }
  if (n_rows == 0) {
    throw IngestError("ingest_table: no complete rows in '" + path + "' (" +
                      std::to_string(n_dropped) + " dropped)");
  }

  Dataset ds;
  ds.seed = seed;
  ds.origin = path;
  ds.x = Matrix(n_rows, schema.size(), std::move(values));

  // z-score continuous columns with complete-case statistics.
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (schema[j].kind != ColumnKind::kContinuous) continue;
    double mean = 0.0;
    for (std::size_t i = 0; i < n_rows; ++i) mean += ds.x(i, j);
    mean /= static_cast<double>(n_rows);
    double var = 0.0;
    for (std::size_t i = 0; i < n_rows; ++i) {
      const double dlt = ds.x(i, j) - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(n_rows);
    const double sd = std::sqrt(var);
    for (std::size_t i = 0; i < n_rows; ++i) {
      ds.x(i, j) = sd > 1e-12 ? (ds.x(i, j) - mean) / sd : 0.0;
    }
  }

  // Synthetic wave outcome: coefficients of ones rescaled by the empirical
  // covariance, noise calibrated on the empirical index distribution.
  const std::size_t d = schema.size();
  const std::vector<double> mu = column_means(ds.x);
  std::vector<double> row_sums(n_rows, 0.0);
  for (std::size_t i = 0; i < n_rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += ds.x(i, j);
    row_sums[i] = acc;
  }
  double sum_mean = 0.0;
  for (double v : row_sums) sum_mean += v;
  sum_mean /= static_cast<double>(n_rows);
  double sum_var = 0.0;
  for (double v : row_sums) sum_var += (v - sum_mean) * (v - sum_mean);
  sum_var /= static_cast<double>(n_rows);
  OutcomeParams op;
  op.curvature = kWaveCurvature;
  op.waves = default_wave_terms();
  if (sum_var > 1e-12) {
    op.beta.assign(d, 1.0 / std::sqrt(sum_var));
    op.beta0 = -sum_mean / std::sqrt(sum_var);
  } else {
    // Degenerate index (a single row, or identical rows): keep unit
    // coefficients, center, and attach a noiseless outcome.
    op.beta.assign(d, 1.0);
    op.beta0 = -sum_mean;
  }

  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n_rows; ++i) {
    const double h = wave_noiseless(ds.x, i, op);
    s1 += h;
    s2 += h * h;
  }
  const auto n = static_cast<double>(n_rows);
  const double hvar = std::max(0.0, s2 / n - (s1 / n) * (s1 / n));
  op.noise_sd = hvar > 1e-12 ? std::sqrt(hvar / kSignalToNoise) : 0.0;

  Rng rng_y = Rng(seed).fork("ingest-outcome");
  ds.outcome = op;
  ds.y = wave_outcome(ds.x, ds.outcome, rng_y);
  return ds;
}

}  // namespace misshift
