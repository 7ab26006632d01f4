#include "misshift/analytic.hpp"

#include <cmath>

#include "misshift/errors.hpp"
#include "misshift/linalg.hpp"
#include "misshift/mathfn.hpp"

namespace misshift {

double wave_gaussian_expectation(double mean, double var, const OutcomeParams& op) {
  double v = mean - 1.0;
  const double c = op.curvature;
  const double denom = std::sqrt(1.0 + c * c * var);
  for (const WaveTerm& w : op.waves) {
    v += w.amplitude * normal_cdf(c * (mean + w.offset) / denom);
  }
  return v;
}

namespace {

std::string pattern_key(const std::vector<double>& row) {
  std::string key(row.size(), '0');
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (is_na(row[j])) key[j] = '1';
  }
  return key;
}

Matrix cholesky_with_fallback(const Matrix& a) {
  try {
    return cholesky_factor(a);
  } catch (const SingularMatrixError&) {
    // Conditional covariances can lose definiteness to roundoff when the
    // observed block nearly determines the missing one.
    Matrix jittered = a;
    double trace = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) trace += a(i, i);
    const double bump = std::max(1e-12 * trace / static_cast<double>(a.rows()), 1e-300);
    for (std::size_t i = 0; i < a.rows(); ++i) jittered(i, i) += bump;
    return cholesky_factor(jittered);
  }
}

}  // namespace

AnalyticEngine::AnalyticEngine(GaussianParams gp, OutcomeParams op,
                               std::optional<SelfMaskParams> selfmask)
    : gp_(std::move(gp)), op_(std::move(op)), selfmask_(std::move(selfmask)) {
  if (op_.beta.size() != gp_.d) {
    throw ContractError("AnalyticEngine: outcome dimension does not match covariates");
  }
}

const AnalyticEngine::PatternData& AnalyticEngine::lookup(const std::vector<double>& row) const {
  if (row.size() != gp_.d) throw ContractError("AnalyticEngine: row dimension mismatch");
  const std::string key = pattern_key(row);
  std::lock_guard<std::mutex> lock(cache_mutex_);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;

  PatternData pd;
  for (std::size_t j = 0; j < gp_.d; ++j) {
    if (key[j] == '1') {
      pd.mis.push_back(j);
    } else {
      pd.obs.push_back(j);
    }
  }
  const std::size_t no = pd.obs.size(), nm = pd.mis.size();
  pd.beta_mis.resize(nm);
  for (std::size_t a = 0; a < nm; ++a) pd.beta_mis[a] = op_.beta[pd.mis[a]];

  if (nm > 0) {
    if (no > 0) {
      Matrix sigma_obs(no, no);
      for (std::size_t a = 0; a < no; ++a)
        for (std::size_t b = 0; b < no; ++b) sigma_obs(a, b) = gp_.sigma(pd.obs[a], pd.obs[b]);
      Matrix sigma_obs_mis(no, nm);
      for (std::size_t a = 0; a < no; ++a)
        for (std::size_t b = 0; b < nm; ++b)
          sigma_obs_mis(a, b) = gp_.sigma(pd.obs[a], pd.mis[b]);
      const Matrix chol_obs = cholesky_factor(sigma_obs);
      pd.w = cholesky_solve_factored(chol_obs, sigma_obs_mis);
      Matrix cond = Matrix(nm, nm);
      for (std::size_t a = 0; a < nm; ++a)
        for (std::size_t b = 0; b < nm; ++b) cond(a, b) = gp_.sigma(pd.mis[a], pd.mis[b]);
      const Matrix correction = matmul_tn(sigma_obs_mis, pd.w);
      for (std::size_t i = 0; i < cond.size(); ++i) cond[i] -= correction[i];
      // Symmetrize against roundoff drift.
      for (std::size_t a = 0; a < nm; ++a)
        for (std::size_t b = a + 1; b < nm; ++b) {
          const double s = 0.5 * (cond(a, b) + cond(b, a));
          cond(a, b) = s;
          cond(b, a) = s;
        }
      pd.cond_cov = std::move(cond);
    } else {
      // Nothing observed: the conditional is the marginal.
      pd.cond_cov = Matrix(nm, nm);
      for (std::size_t a = 0; a < nm; ++a)
        for (std::size_t b = 0; b < nm; ++b) pd.cond_cov(a, b) = gp_.sigma(pd.mis[a], pd.mis[b]);
    }
    pd.chol_cond = cholesky_with_fallback(pd.cond_cov);
    for (std::size_t a = 0; a < nm; ++a)
      for (std::size_t b = 0; b < nm; ++b)
        pd.s2_mar += pd.beta_mis[a] * pd.cond_cov(a, b) * pd.beta_mis[b];

    if (selfmask_.has_value()) {
      // Posterior of the missing block under the Gaussian masking tilt:
      // with C the conditional covariance and D = diag(sigma_tilde^2),
      //   post_cov  = C - C (C + D)^{-1} C
      //   post_mean = A + C (C + D)^{-1} (mu_tilde - A).
      Matrix cd = pd.cond_cov;
      for (std::size_t a = 0; a < nm; ++a) {
        const double st = selfmask_->sigma_tilde[pd.mis[a]];
        cd(a, a) += st * st;
      }
      const Matrix chol_cd = cholesky_factor(cd);
      const Matrix m = cholesky_solve_factored(chol_cd, pd.cond_cov);  // (C+D)^{-1} C
      pd.post_map = transpose(m);                                      // C (C+D)^{-1}
      Matrix post = pd.cond_cov;
      const Matrix reduction = matmul(pd.post_map, pd.cond_cov);
      for (std::size_t i = 0; i < post.size(); ++i) post[i] -= reduction[i];
      for (std::size_t a = 0; a < nm; ++a)
        for (std::size_t b = a + 1; b < nm; ++b) {
          const double s = 0.5 * (post(a, b) + post(b, a));
          post(a, b) = s;
          post(b, a) = s;
        }
      pd.post_cov = std::move(post);
      pd.chol_post = cholesky_with_fallback(pd.post_cov);
      for (std::size_t a = 0; a < nm; ++a)
        for (std::size_t b = 0; b < nm; ++b)
          pd.s2_post += pd.beta_mis[a] * pd.post_cov(a, b) * pd.beta_mis[b];
    }
  }
  return cache_.emplace(key, std::move(pd)).first->second;
}

void AnalyticEngine::conditional_mean(const PatternData& pd, const std::vector<double>& row,
                                      std::vector<double>& out) const {
  const std::size_t no = pd.obs.size(), nm = pd.mis.size();
  out.assign(nm, 0.0);
  for (std::size_t b = 0; b < nm; ++b) out[b] = gp_.mu[pd.mis[b]];
  if (no == 0 || nm == 0) return;
  for (std::size_t a = 0; a < no; ++a) {
    const double centered = row[pd.obs[a]] - gp_.mu[pd.obs[a]];
    if (centered == 0.0) continue;
    for (std::size_t b = 0; b < nm; ++b) out[b] += pd.w(a, b) * centered;
  }
}

double AnalyticEngine::index_mean(const PatternData& pd, const std::vector<double>& row,
                                  const std::vector<double>& cond_mean) const {
  double z = op_.beta0;
  for (std::size_t a = 0; a < pd.obs.size(); ++a) z += op_.beta[pd.obs[a]] * row[pd.obs[a]];
  for (std::size_t b = 0; b < pd.mis.size(); ++b) z += pd.beta_mis[b] * cond_mean[b];
  return z;
}

ConditionalGaussian AnalyticEngine::conditional(const std::vector<double>& row) const {
  const PatternData& pd = lookup(row);
  ConditionalGaussian out;
  out.missing_cols = pd.mis;
  conditional_mean(pd, row, out.mean);
  out.cov = pd.cond_cov;
  return out;
}

double AnalyticEngine::bayes_mar(const std::vector<double>& row) const {
  const PatternData& pd = lookup(row);
  std::vector<double> cm;
  conditional_mean(pd, row, cm);
  return wave_gaussian_expectation(index_mean(pd, row, cm), pd.s2_mar, op_);
}

double AnalyticEngine::bayes_selfmask(const std::vector<double>& row) const {
  if (!selfmask_.has_value()) {
    throw ContractError("bayes_selfmask: engine has no self-masking parameters");
  }
  const PatternData& pd = lookup(row);
  if (pd.mis.empty()) return wave_gaussian_expectation(index_mean(pd, row, {}), 0.0, op_);
  std::vector<double> post_mean;
  selfmask_posterior_from(pd, row, post_mean);
  double z = op_.beta0;
  for (std::size_t a = 0; a < pd.obs.size(); ++a) z += op_.beta[pd.obs[a]] * row[pd.obs[a]];
  for (std::size_t b = 0; b < pd.mis.size(); ++b) z += pd.beta_mis[b] * post_mean[b];
  return wave_gaussian_expectation(z, pd.s2_post, op_);
}

double AnalyticEngine::bayes(const std::vector<double>& row) const {
  return selfmask_.has_value() ? bayes_selfmask(row) : bayes_mar(row);
}

double AnalyticEngine::cond_oracle(const std::vector<double>& row) const {
  const PatternData& pd = lookup(row);
  std::vector<double> cm;
  conditional_mean(pd, row, cm);
  double z = op_.beta0;
  for (std::size_t a = 0; a < pd.obs.size(); ++a) z += op_.beta[pd.obs[a]] * row[pd.obs[a]];
  for (std::size_t b = 0; b < pd.mis.size(); ++b) z += pd.beta_mis[b] * cm[b];
  return wave_value(z, op_);
}

double AnalyticEngine::prob_oracle(const std::vector<double>& row, std::size_t n_draws,
                                   Rng& rng) const {
  if (n_draws < 1) throw ContractError("prob_oracle: n_draws must be at least 1");
  const PatternData& pd = lookup(row);
  const std::size_t nm = pd.mis.size();
  std::vector<double> center;
  const Matrix* factor = nullptr;
  if (nm > 0) {
    if (selfmask_.has_value()) {
      selfmask_posterior_from(pd, row, center);
      factor = &pd.chol_post;
    } else {
      conditional_mean(pd, row, center);
      factor = &pd.chol_cond;
    }
  }
  double z_obs = op_.beta0;
  for (std::size_t a = 0; a < pd.obs.size(); ++a) z_obs += op_.beta[pd.obs[a]] * row[pd.obs[a]];

  std::vector<double> zdraw(nm);
  double acc = 0.0;
  for (std::size_t t = 0; t < n_draws; ++t) {
    double z = z_obs;
    if (nm > 0) {
      for (double& v : zdraw) v = rng.normal();
      for (std::size_t b = 0; b < nm; ++b) {
        double x = center[b];
        for (std::size_t c = 0; c <= b; ++c) x += (*factor)(b, c) * zdraw[c];
        z += pd.beta_mis[b] * x;
      }
    }
    acc += wave_value(z, op_);
  }
  return acc / static_cast<double>(n_draws);
}

void AnalyticEngine::selfmask_posterior_from(const PatternData& pd,
                                             const std::vector<double>& row,
                                             std::vector<double>& mean) const {
  std::vector<double> a;
  conditional_mean(pd, row, a);
  const std::size_t nm = pd.mis.size();
  mean.assign(nm, 0.0);
  for (std::size_t i = 0; i < nm; ++i) {
    double v = a[i];
    for (std::size_t j = 0; j < nm; ++j) {
      v += pd.post_map(i, j) * (selfmask_->mu_tilde[pd.mis[j]] - a[j]);
    }
    mean[i] = v;
  }
}

void AnalyticEngine::selfmask_posterior(const std::vector<double>& row,
                                        std::vector<double>& mean, Matrix* cov) const {
  if (!selfmask_.has_value()) {
    throw ContractError("selfmask_posterior: engine has no self-masking parameters");
  }
  const PatternData& pd = lookup(row);
  selfmask_posterior_from(pd, row, mean);
  if (cov != nullptr) *cov = pd.post_cov;
}

ConditionalGaussian conditional_gaussian(const GaussianParams& gp,
                                         const std::vector<double>& row) {
  OutcomeParams dummy;
  dummy.beta.assign(gp.d, 0.0);
  return AnalyticEngine(gp, dummy).conditional(row);
}

double bayes_predict_mar(const std::vector<double>& row, const GaussianParams& gp,
                         const OutcomeParams& op) {
  return AnalyticEngine(gp, op).bayes_mar(row);
}

double bayes_predict_selfmask(const std::vector<double>& row, const GaussianParams& gp,
                              const OutcomeParams& op, const SelfMaskParams& sm) {
  return AnalyticEngine(gp, op, sm).bayes_selfmask(row);
}

double oracle_cond_predict(const std::vector<double>& row, const GaussianParams& gp,
                           const OutcomeParams& op) {
  return AnalyticEngine(gp, op).cond_oracle(row);
}

double oracle_prob_predict(const std::vector<double>& row, const GaussianParams& gp,
                           const OutcomeParams& op, std::size_t n_draws, Rng& rng,
                           const SelfMaskParams* sm) {
  if (sm != nullptr) {
    return AnalyticEngine(gp, op, *sm).prob_oracle(row, n_draws, rng);
  }
  return AnalyticEngine(gp, op).prob_oracle(row, n_draws, rng);
}

double empirical_bayes_risk(const std::vector<double>& predictions,
                            const std::vector<double>& y) {
  if (predictions.empty() || predictions.size() != y.size()) {
    throw ContractError("empirical_bayes_risk: inputs empty or of unequal length");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - predictions[i];
    acc += d * d;
  }
  return acc / static_cast<double>(y.size());
}

std::vector<double> masked_row(const MaskedDataset& md, std::size_t i) {
  std::vector<double> row(md.dim());
  for (std::size_t j = 0; j < md.dim(); ++j) row[j] = md.xtilde(i, j);
  return row;
}

}  // namespace misshift
