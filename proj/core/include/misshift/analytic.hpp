#pragma once

#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "misshift/datagen.hpp"
#include "misshift/matrix.hpp"
#include "misshift/missingness.hpp"
#include "misshift/rng.hpp"

namespace misshift {

// Law of the missing block given the observed entries of one row.
struct ConditionalGaussian {
  std::vector<std::size_t> missing_cols;
  std::vector<double> mean;
  Matrix cov;
};

// E[h(Z)] for Z ~ N(mean, var) and the Gaussian-cdf wave outcome; exact via
//   E[Phi(c (Z + b))] = Phi(c (mean + b) / sqrt(1 + c^2 var)).
double wave_gaussian_expectation(double mean, double var, const OutcomeParams& op);

// Closed-form machinery for one generating model. All observed-block
// inverses go through per-pattern Cholesky factorizations, cached by mask
// bits; insertion is synchronized so rows may be evaluated in parallel.
//
// When self-masking parameters are supplied, bayes() uses the tilted
// posterior of the missing block; otherwise it is the M(C)AR predictor,
// which by construction depends on (x_obs, m) only and not on any
// missingness-mechanism parameters.
class AnalyticEngine {
 public:
  AnalyticEngine(GaussianParams gp, OutcomeParams op,
                 std::optional<SelfMaskParams> selfmask = std::nullopt);

  const GaussianParams& gaussian() const { return gp_; }
  const OutcomeParams& outcome() const { return op_; }
  bool has_selfmask() const { return selfmask_.has_value(); }

  // Rows are NaN-encoded: a NaN entry is a missing covariate.
  ConditionalGaussian conditional(const std::vector<double>& row) const;
  double bayes_mar(const std::vector<double>& row) const;
  double bayes_selfmask(const std::vector<double>& row) const;
  double bayes(const std::vector<double>& row) const;
  double cond_oracle(const std::vector<double>& row) const;
  double prob_oracle(const std::vector<double>& row, std::size_t n_draws, Rng& rng) const;

  // Self-mask posterior of the missing block (throws unless constructed
  // with self-masking parameters).
  void selfmask_posterior(const std::vector<double>& row, std::vector<double>& mean,
                          Matrix* cov) const;

 private:
  struct PatternData {
    std::vector<std::size_t> obs, mis;
    Matrix w;          // Sigma_obs^{-1} Sigma_obs,mis
    Matrix cond_cov;   // Sigma_mis|obs
    Matrix chol_cond;  // factor of cond_cov (missing block present only)
    double s2_mar = 0.0;
    std::vector<double> beta_mis;
    // self-mask route
    Matrix post_map;  // C (C + D)^{-1}
    Matrix post_cov;
    Matrix chol_post;
    double s2_post = 0.0;
  };

  const PatternData& lookup(const std::vector<double>& row) const;
  void conditional_mean(const PatternData& pd, const std::vector<double>& row,
                        std::vector<double>& out) const;
  double index_mean(const PatternData& pd, const std::vector<double>& row,
                    const std::vector<double>& cond_mean) const;
  void selfmask_posterior_from(const PatternData& pd, const std::vector<double>& row,
                               std::vector<double>& mean) const;

  GaussianParams gp_;
  OutcomeParams op_;
  std::optional<SelfMaskParams> selfmask_;
  mutable std::mutex cache_mutex_;
  mutable std::unordered_map<std::string, PatternData> cache_;
};

// Single-shot variants of the operations above (no cache); pattern and
// observed values are taken from the NaN-encoded row.
ConditionalGaussian conditional_gaussian(const GaussianParams& gp,
                                         const std::vector<double>& row);
double bayes_predict_mar(const std::vector<double>& row, const GaussianParams& gp,
                         const OutcomeParams& op);
double bayes_predict_selfmask(const std::vector<double>& row, const GaussianParams& gp,
                              const OutcomeParams& op, const SelfMaskParams& sm);
double oracle_cond_predict(const std::vector<double>& row, const GaussianParams& gp,
                           const OutcomeParams& op);
double oracle_prob_predict(const std::vector<double>& row, const GaussianParams& gp,
                           const OutcomeParams& op, std::size_t n_draws, Rng& rng,
                           const SelfMaskParams* sm = nullptr);

// Mean squared prediction error; errors on empty input.
double empirical_bayes_risk(const std::vector<double>& predictions,
                            const std::vector<double>& y);

std::vector<double> masked_row(const MaskedDataset& md, std::size_t i);

}  // namespace misshift
