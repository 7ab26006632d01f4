#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "misshift/datagen.hpp"
#include "misshift/matrix.hpp"
#include "misshift/rng.hpp"

namespace misshift {

enum class MechanismKind { kMcar, kMarLogistic, kSelfMask, kMarY };

std::string mechanism_kind_name(MechanismKind kind);
MechanismKind mechanism_kind_from_name(const std::string& name);

// Non-monotone MAR: a random subset J of columns is masked completely at
// random, the remaining columns through a logistic function of the still
// observed, standardized J values (masked J entries contribute zero).
struct MarLogisticParams {
  std::vector<std::size_t> mcar_cols;      // J
  std::vector<std::size_t> logistic_cols;  // the rest, in column order
  Matrix slopes;                           // |logistic_cols| x |J|
  std::vector<double> intercepts;          // calibrated, one per logistic column
  std::vector<double> scales;              // s, one per logistic column
  std::vector<double> direction_norms;     // v, one per logistic column
  std::vector<double> j_means, j_sds;      // standardization of the J columns
};

// Gaussian self-masking: a cell goes missing with probability
//   K * exp(-(x - mu_tilde)^2 / (2 sigma_tilde^2)).
// For tilt > 0 the masking bump sits above the column mean, so larger
// values are more likely to go missing.
struct SelfMaskParams {
  double tilt = 2.0;
  std::vector<double> amplitude;    // K, one per column
  std::vector<double> mu_tilde;
  std::vector<double> sigma_tilde;
};

struct MarYParams {
  std::vector<double> slopes;      // one per column, sign randomized
  std::vector<double> intercepts;  // calibrated, one per column
};

// Tagged union over the four mechanisms. All calibrated parameters are kept
// so a mechanism instance can be persisted and re-applied exactly.
struct MechanismSpec {
  MechanismKind kind = MechanismKind::kMcar;
  double rate = 0.0;
  MarLogisticParams mar_logistic;
  SelfMaskParams selfmask;
  MarYParams mar_y;
};

struct MaskedDataset {
  Matrix xtilde;  // NaN wherever mask is 1
  Matrix mask;    // n x d of 0/1
  std::vector<double> y;
  std::optional<GaussianParams> gaussian;
  OutcomeParams outcome;
  std::optional<MechanismSpec> mechanism;
  std::shared_ptr<const Dataset> source;  // null when loaded standalone
  // Complete covariates aligned with the rows above. In-memory only, for
  // ground-truth references; never persisted and never visible to learned
  // estimators.
  Matrix x_complete;

  std::size_t rows() const { return xtilde.rows(); }
  std::size_t dim() const { return xtilde.cols(); }
  bool observed(std::size_t i, std::size_t j) const { return mask(i, j) == 0.0; }
  bool has_complete() const { return !x_complete.empty(); }
  MaskedDataset take_rows(std::size_t begin, std::size_t end) const;
};

inline bool is_na(double v) { return v != v; }
double na_value();

// Mechanism construction. Calibration draws and parameter draws consume the
// given stream; the returned spec reproduces the target marginal rate per
// column within the calibration tolerance.
MechanismSpec draw_mcar_spec(double rate);
MechanismSpec draw_mar_logistic_spec(const Dataset& ds, double rate, Rng& rng);
MechanismSpec draw_selfmask_spec(const Dataset& ds, double rate, double tilt);
MechanismSpec draw_mar_y_spec(const Dataset& ds, double rate, double slope_scale, Rng& rng);

MaskedDataset apply_mechanism(const MechanismSpec& spec,
                              const std::shared_ptr<const Dataset>& ds, Rng& rng);

// Draw-and-apply conveniences.
MaskedDataset apply_mcar(const std::shared_ptr<const Dataset>& ds, double rate, Rng& rng);
MaskedDataset apply_mar_logistic(const std::shared_ptr<const Dataset>& ds, double rate,
                                 Rng& rng);
MaskedDataset apply_selfmask(const std::shared_ptr<const Dataset>& ds, double rate,
                             double tilt, Rng& rng);
MaskedDataset apply_mar_y(const std::shared_ptr<const Dataset>& ds, double rate, Rng& rng);

// Finds gamma0 in [-30, 30] such that the mean of prob(sample, gamma0) over
// the calibration sample hits target_rate within 1e-3 (at most 100
// bisection steps). prob must be nondecreasing in gamma0.
double calibrate_intercept(const std::function<double(double, double)>& prob,
                           double target_rate, const std::vector<double>& samples);

// Marginal masking rate of a self-masking column under N(mean, sd^2).
double selfmask_marginal_rate(double amplitude, double mu_tilde, double sigma_tilde,
                              double mean, double sd);
double selfmask_probability(double x, double amplitude, double mu_tilde, double sigma_tilde);

double empirical_missing_rate(const MaskedDataset& md);
double empirical_missing_rate(const MaskedDataset& md, std::size_t column);

}  // namespace misshift
