#pragma once

#include <memory>
#include <string>
#include <vector>

#include "misshift/config.hpp"
#include "misshift/missingness.hpp"
#include "misshift/rng.hpp"

namespace misshift {

// A trained predictor over partially observed rows. Implementations are
// immutable after fitting, so one model may serve parallel evaluations.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual std::string name() const = 0;
  virtual std::vector<double> predict(const MaskedDataset& md) const = 0;
  virtual void save(const std::string& path) const = 0;
  // Hash of the serialized state; unchanged by predict calls.
  virtual std::uint64_t state_hash() const = 0;
};

// Registered estimator names, in reporting order:
//   bayes        analytic Bayes predictor (mechanism-aware for self-masking)
//   cond_oracle  true conditional-mean imputation into the true outcome
//   prob_oracle  averaged draws from the true conditional / tilted posterior
//   truth        the noiseless outcome function on the complete covariates
//   mean         constant predictor at the training outcome mean
//   ice          chained-equations conditional means -> MLP
//   ice_mask     ice with the mask appended to the design
//   mice         multiple imputation (posterior-predictive draws) -> MLP
//   ice_y        two-stage outcome-aware imputation, deterministic fills
//   mice_y       two-stage outcome-aware multiple imputation
//   neumiss      recurrent observed-coordinate embedding, end-to-end
//   neumise      recurrent missing-coordinate embedding, end-to-end
const std::vector<std::string>& registered_estimators();
bool estimator_known(const std::string& name);

// Whether the estimator can be fit/evaluated on this data (analytic routes
// need the generating Gaussian; truth needs the complete covariates).
bool estimator_applicable(const std::string& name, const MaskedDataset& train);

std::unique_ptr<Estimator> fit_estimator(const std::string& name, const MaskedDataset& train,
                                         const MaskedDataset& val, const FitOptions& options,
                                         Rng rng);

std::unique_ptr<Estimator> load_estimator(const std::string& path);

}  // namespace misshift
