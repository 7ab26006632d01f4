#pragma once

#include <cstddef>
#include <vector>

#include "misshift/matrix.hpp"
#include "misshift/missingness.hpp"
#include "misshift/rng.hpp"

namespace misshift {

inline constexpr double kDefaultRidgeAlpha = 1e-6;
inline constexpr std::size_t kDefaultIceIterations = 10;
inline constexpr std::size_t kDefaultImputations = 5;

// Bayesian linear model used for each per-column conditional. The noise
// variance comes from a two-pass fit: ridge point estimate, residual
// variance, then the posterior at that noise level.
struct RidgePosterior {
  std::vector<double> mean;
  Matrix cov;
  double noise_var = 0.0;
  double alpha = kDefaultRidgeAlpha;
};

RidgePosterior fit_ridge_posterior(const Matrix& design, const std::vector<double>& target,
                                   double alpha);

std::vector<double> draw_coefficients(const RidgePosterior& posterior, Rng& rng);

struct IceFlags {
  bool use_mask = false;      // append the 0/1 mask to transformed designs
  bool use_y = false;         // outcome joins the predictors (fit and
                              // transform-on-train only)
  bool probabilistic = false; // draw from the posterior predictive (multiple
                              // imputation) instead of conditional means
  bool fit_all_columns = false;  // train a conditional for every column, not
                                 // just those with missing values (used when
                                 // fitting an imputer on completed data)
};

struct IceColumnModel {
  std::size_t column = 0;
  RidgePosterior posterior;
};

// Chained-equations imputer. Columns are swept in index order; each sweep
// refits the conditional of a column on all other columns at their current
// working values, using only rows where that column is observed.
struct IceModel {
  std::size_t dim = 0;
  std::size_t n_iter = kDefaultIceIterations;
  double alpha = kDefaultRidgeAlpha;
  IceFlags flags;
  std::vector<double> column_means;  // means of observed entries at fit time
  std::vector<IceColumnModel> columns;
};

IceModel ice_fit(const MaskedDataset& md, IceFlags flags,
                 std::size_t n_iter = kDefaultIceIterations,
                 double alpha = kDefaultRidgeAlpha);

// Completed designs. The deterministic variant fills conditional means and
// requires n_imp = 1; the probabilistic variant draws coefficients and noise
// per fill, giving n_imp completed datasets. Observed cells are never
// modified. With use_mask, mask columns are appended to every output.
std::vector<Matrix> ice_transform(const IceModel& model, const MaskedDataset& md, Rng& rng,
                                  std::size_t n_imp = 1);

// Two-stage strategy for outcome-dependent missingness: impute the training
// data conditioning on y, then refit a y-free imputer on the completed data
// so the deployment environment (where y is unavailable) can be transformed.
struct YConditionalPipeline {
  IceModel stage1;                 // y-aware, fit on the source data
  IceModel stage2;                 // y-free, fit on the completed data
  std::vector<Matrix> completed;   // stage-1 completions of the source rows
};

YConditionalPipeline y_conditional_pipeline(const MaskedDataset& md, bool probabilistic,
                                            std::size_t n_imp, std::size_t n_iter,
                                            double alpha, Rng& rng);

}  // namespace misshift
