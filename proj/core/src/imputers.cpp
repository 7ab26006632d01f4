#include "misshift/imputers.hpp"

#include <algorithm>
#include <cmath>

#include "misshift/errors.hpp"
#include "misshift/linalg.hpp"

namespace misshift {

namespace {

constexpr double kNoiseVarFloor = 1e-10;

Matrix posterior_precision(const Matrix& xtx, double alpha, double noise_var) {
  Matrix p = xtx;
  const double inv_nv = 1.0 / noise_var;
  for (std::size_t i = 0; i < p.size(); ++i) p[i] *= inv_nv;
  for (std::size_t i = 0; i < p.rows(); ++i) p(i, i) += alpha;
  return p;
}

}  // namespace

RidgePosterior fit_ridge_posterior(const Matrix& design, const std::vector<double>& target,
                                   double alpha) {
  const std::size_t n = design.rows(), k = design.cols();
  if (k == 0) throw ContractError("fit_ridge_posterior: design has no columns");
  if (n < 2 || target.size() != n) {
    throw ContractError("fit_ridge_posterior: needs at least 2 rows and matching target");
  }

  Matrix xtx = matmul_tn(design, design);
  std::vector<double> xty(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) xty[j] += design(i, j) * target[i];
  }

  // Pass 1: ridge point estimate at unit noise. Collinear designs can defeat
  // the nominal prior precision, so escalate it until the factorization holds.
  Matrix point(k, 1);
  double alpha_eff = std::max(alpha, 1e-12);
  Matrix chol;
  for (int attempt = 0;; ++attempt) {
    Matrix a = xtx;
    for (std::size_t i = 0; i < k; ++i) a(i, i) += alpha_eff;
    try {
      chol = cholesky_factor(a);
      break;
    } catch (const SingularMatrixError&) {
      if (attempt >= 4) throw;
      alpha_eff *= 1e4;
    }
  }
  point = cholesky_solve_factored(chol, Matrix::column(xty));

  // Pass 2: residual variance under the point fit.
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double pred = 0.0;
    for (std::size_t j = 0; j < k; ++j) pred += design(i, j) * point(j, 0);
    const double r = target[i] - pred;
    rss += r * r;
  }
  const double noise_var = std::max(rss / static_cast<double>(n), kNoiseVarFloor);

  // Pass 3: posterior at that noise level.
  RidgePosterior out;
  out.alpha = alpha;
  out.noise_var = noise_var;
  const Matrix precision = posterior_precision(xtx, alpha_eff, noise_var);
  const Matrix pchol = cholesky_factor(precision);
  Matrix rhs = Matrix::column(xty);
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] /= noise_var;
  const Matrix mean = cholesky_solve_factored(pchol, rhs);
  out.mean.assign(mean.data(), mean.data() + k);
  out.cov = cholesky_solve_factored(pchol, Matrix::identity(k));
  // Symmetrize against roundoff drift.
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      const double s = 0.5 * (out.cov(a, b) + out.cov(b, a));
      out.cov(a, b) = s;
      out.cov(b, a) = s;
    }
  return out;
}

std::vector<double> draw_coefficients(const RidgePosterior& posterior, Rng& rng) {
  const std::size_t k = posterior.mean.size();
  Matrix chol;
  try {
    chol = cholesky_factor(posterior.cov);
  } catch (const SingularMatrixError&) {
    Matrix c = posterior.cov;
    for (std::size_t i = 0; i < k; ++i) c(i, i) += 1e-14;
    chol = cholesky_factor(c);
  }
  std::vector<double> z(k);
  for (double& v : z) v = rng.normal();
  std::vector<double> out(posterior.mean);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) out[i] += chol(i, j) * z[j];
  }
  return out;
}

namespace {

// Design row for column j: all other columns at their working values,
// optionally the outcome, then an intercept.
void build_design_row(const Matrix& working, const std::vector<double>* y, std::size_t row,
                      std::size_t skip_col, std::vector<double>& out) {
  out.clear();
  for (std::size_t c = 0; c < working.cols(); ++c) {
    if (c == skip_col) continue;
    out.push_back(working(row, c));
  }
  if (y != nullptr) out.push_back((*y)[row]);
  out.push_back(1.0);
}

Matrix build_design(const Matrix& working, const std::vector<double>* y,
                    const std::vector<std::size_t>& rows, std::size_t skip_col) {
  const std::size_t k = working.cols() - 1 + (y != nullptr ? 1 : 0) + 1;
  Matrix design(rows.size(), k);
  std::vector<double> tmp;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    build_design_row(working, y, rows[i], skip_col, tmp);
    for (std::size_t j = 0; j < k; ++j) design(i, j) = tmp[j];
  }
  return design;
}

double predict_row(const std::vector<double>& coef, const Matrix& working,
                   const std::vector<double>* y, std::size_t row, std::size_t skip_col) {
  double acc = 0.0;
  std::size_t k = 0;
  for (std::size_t c = 0; c < working.cols(); ++c) {
    if (c == skip_col) continue;
    acc += coef[k++] * working(row, c);
  }
  if (y != nullptr) acc += coef[k++] * (*y)[row];
  acc += coef[k];  // intercept
  return acc;
}

}  // namespace

IceModel ice_fit(const MaskedDataset& md, IceFlags flags, std::size_t n_iter, double alpha) {
  if (n_iter < 1) throw ContractError("ice_fit: n_iter must be at least 1");
  const std::size_t n = md.rows(), d = md.dim();
  if (flags.use_y && md.y.size() != n) {
    throw ContractError("ice_fit: use_y requires an outcome of matching length");
  }

  IceModel model;
  model.dim = d;
  model.n_iter = n_iter;
  model.alpha = alpha;
  model.flags = flags;
  model.column_means.assign(d, 0.0);

  std::vector<std::vector<std::size_t>> obs_rows(d), mis_rows(d);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (md.observed(i, j)) {
        obs_rows[j].push_back(i);
      } else {
        mis_rows[j].push_back(i);
      }
    }
    if (obs_rows[j].empty()) {
      throw ContractError("ice_fit: column " + std::to_string(j) + " has no observed values");
    }
    if (obs_rows[j].size() < 2) {
      throw ContractError("ice_fit: column " + std::to_string(j) +
                          " has fewer than 2 observed values");
    }
    double m = 0.0;
    for (std::size_t i : obs_rows[j]) m += md.xtilde(i, j);
    model.column_means[j] = m / static_cast<double>(obs_rows[j].size());
  }

  std::vector<std::size_t> model_cols;
  for (std::size_t j = 0; j < d; ++j) {
    if (flags.fit_all_columns || !mis_rows[j].empty()) model_cols.push_back(j);
  }

  Matrix working = md.xtilde;
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i : mis_rows[j]) working(i, j) = model.column_means[j];
  }

  bool any_missing = false;
  for (std::size_t j = 0; j < d && !any_missing; ++j) any_missing = !mis_rows[j].empty();
  // With nothing to impute the sweeps are identical, one fit per column is
  // enough.
  const std::size_t sweeps = any_missing ? n_iter : 1;

  const std::vector<double>* y = flags.use_y ? &md.y : nullptr;
  model.columns.clear();
  for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
    const bool last = sweep + 1 == sweeps;
    if (last) model.columns.reserve(model_cols.size());
    for (std::size_t j : model_cols) {
      const Matrix design = build_design(working, y, obs_rows[j], j);
      std::vector<double> target(obs_rows[j].size());
      for (std::size_t i = 0; i < target.size(); ++i) target[i] = md.xtilde(obs_rows[j][i], j);
      RidgePosterior posterior = fit_ridge_posterior(design, target, alpha);
      for (std::size_t i : mis_rows[j]) {
        working(i, j) = predict_row(posterior.mean, working, y, i, j);
      }
      if (last) model.columns.push_back({j, std::move(posterior)});
    }
  }
  return model;
}

std::vector<Matrix> ice_transform(const IceModel& model, const MaskedDataset& md, Rng& rng,
                                  std::size_t n_imp) {
  if (md.dim() != model.dim) throw ContractError("ice_transform: dimension mismatch");
  if (!model.flags.probabilistic && n_imp != 1) {
    throw ContractError("ice_transform: deterministic variant requires n_imp = 1");
  }
  if (n_imp < 1) throw ContractError("ice_transform: n_imp must be at least 1");
  if (model.flags.use_y && md.y.size() != md.rows()) {
    throw ContractError("ice_transform: model was fit with the outcome as a predictor");
  }
  const std::size_t n = md.rows(), d = md.dim();
  const std::vector<double>* y = model.flags.use_y ? &md.y : nullptr;

  std::vector<std::vector<std::size_t>> mis_rows(d);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!md.observed(i, j)) mis_rows[j].push_back(i);
    }
  }

  std::vector<Matrix> out;
  out.reserve(n_imp);
  for (std::size_t imp = 0; imp < n_imp; ++imp) {
    Matrix working = md.xtilde;
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t i : mis_rows[j]) working(i, j) = model.column_means[j];
    }
    for (std::size_t sweep = 0; sweep < model.n_iter; ++sweep) {
      for (const IceColumnModel& cm : model.columns) {
        const std::size_t j = cm.column;
        if (mis_rows[j].empty()) continue;
        if (model.flags.probabilistic) {
          const std::vector<double> coef = draw_coefficients(cm.posterior, rng);
          const double noise_sd = std::sqrt(cm.posterior.noise_var);
          for (std::size_t i : mis_rows[j]) {
            working(i, j) = predict_row(coef, working, y, i, j) + rng.normal(0.0, noise_sd);
          }
        } else {
          for (std::size_t i : mis_rows[j]) {
            working(i, j) = predict_row(cm.posterior.mean, working, y, i, j);
          }
        }
      }
    }
    if (model.flags.use_mask) {
      out.push_back(hcat(working, md.mask));
    } else {
      out.push_back(std::move(working));
    }
  }
  return out;
}

YConditionalPipeline y_conditional_pipeline(const MaskedDataset& md, bool probabilistic,
                                            std::size_t n_imp, std::size_t n_iter,
                                            double alpha, Rng& rng) {
  YConditionalPipeline out;
  IceFlags stage1_flags;
  stage1_flags.use_y = true;
  stage1_flags.probabilistic = probabilistic;
  out.stage1 = ice_fit(md, stage1_flags, n_iter, alpha);

  Rng rng_complete = rng.fork("stage1-completions");
  out.completed = ice_transform(out.stage1, md, rng_complete, probabilistic ? n_imp : 1);

  // Stack the completions and fit a y-free conditional for every column on
  // that fully observed data.
  const std::size_t n = md.rows(), d = md.dim();
  const std::size_t reps = out.completed.size();
  MaskedDataset stacked;
  stacked.xtilde = Matrix(n * reps, d);
  stacked.mask = Matrix(n * reps, d, 0.0);
  stacked.y.resize(n * reps);
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) stacked.xtilde(r * n + i, j) = out.completed[r](i, j);
      stacked.y[r * n + i] = md.y[i];
    }
  }
  stacked.outcome = md.outcome;

  IceFlags stage2_flags;
  stage2_flags.probabilistic = probabilistic;
  stage2_flags.fit_all_columns = true;
  out.stage2 = ice_fit(stacked, stage2_flags, n_iter, alpha);
  return out;
}

}  // namespace misshift
