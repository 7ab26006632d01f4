#include "misshift/missingness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "misshift/errors.hpp"
#include "misshift/mathfn.hpp"

namespace misshift {

namespace {

constexpr double kInterceptLo = -30.0;
constexpr double kInterceptHi = 30.0;
constexpr double kRateTolerance = 1e-3;
constexpr int kMaxBisectionSteps = 100;

// Per-column marginal moments: model-implied when the generating Gaussian is
// known, empirical otherwise.
void column_moments(const Dataset& ds, std::vector<double>& means, std::vector<double>& sds) {
  const std::size_t d = ds.x.cols();
  means.assign(d, 0.0);
  sds.assign(d, 0.0);
  if (ds.gaussian.has_value()) {
    for (std::size_t j = 0; j < d; ++j) {
      means[j] = ds.gaussian->mu[j];
      sds[j] = std::sqrt(ds.gaussian->sigma(j, j));
    }
    return;
  }
  const std::size_t n = ds.x.rows();
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += ds.x(i, j);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dlt = ds.x(i, j) - m;
      v += dlt * dlt;
    }
    means[j] = m;
    sds[j] = std::sqrt(v / static_cast<double>(n));
  }
}

// Correlation of the J columns on the standardized scale, model-implied or
// empirical to match the standardization used for the logistic index.
Matrix j_correlation(const Dataset& ds, const std::vector<std::size_t>& j_cols,
                     const std::vector<double>& means, const std::vector<double>& sds) {
  const std::size_t k = j_cols.size();
  Matrix r(k, k);
  if (ds.gaussian.has_value()) {
    const Matrix& sigma = ds.gaussian->sigma;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        r(a, b) = sigma(j_cols[a], j_cols[b]) / (sds[j_cols[a]] * sds[j_cols[b]]);
    return r;
  }
  const std::size_t n = ds.x.rows();
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a; b < k; ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += (ds.x(i, j_cols[a]) - means[j_cols[a]]) * (ds.x(i, j_cols[b]) - means[j_cols[b]]);
      }
      acc /= static_cast<double>(n) * sds[j_cols[a]] * sds[j_cols[b]];
      r(a, b) = acc;
      r(b, a) = acc;
    }
  }
  return r;
}

MaskedDataset make_masked(const std::shared_ptr<const Dataset>& ds, Matrix mask,
                          const MechanismSpec& spec) {
  MaskedDataset md;
  md.mask = std::move(mask);
  md.xtilde = ds->x;
  for (std::size_t i = 0; i < md.mask.size(); ++i) {
    if (md.mask[i] == 1.0) md.xtilde[i] = na_value();
  }
  md.y = ds->y;
  md.gaussian = ds->gaussian;
  md.outcome = ds->outcome;
  md.mechanism = spec;
  md.source = ds;
  md.x_complete = ds->x;
  return md;
}

void check_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ContractError("missingness rate must lie in [0, 1)");
  }
}

}  // namespace

double na_value() { return std::numeric_limits<double>::quiet_NaN(); }

std::string mechanism_kind_name(MechanismKind kind) {
  switch (kind) {
    case MechanismKind::kMcar: return "mcar";
    case MechanismKind::kMarLogistic: return "mar_logistic";
    case MechanismKind::kSelfMask: return "selfmask";
    case MechanismKind::kMarY: return "mar_y";
  }
  return "unknown";
}

MechanismKind mechanism_kind_from_name(const std::string& name) {
  if (name == "mcar") return MechanismKind::kMcar;
  if (name == "mar_logistic") return MechanismKind::kMarLogistic;
  if (name == "selfmask") return MechanismKind::kSelfMask;
  if (name == "mar_y") return MechanismKind::kMarY;
  throw ConfigError("unknown mechanism kind '" + name + "'");
}

MaskedDataset MaskedDataset::take_rows(std::size_t begin, std::size_t end) const {
  MaskedDataset out;
  const std::size_t d = dim();
  out.xtilde = Matrix(end - begin, d);
  out.mask = Matrix(end - begin, d);
  for (std::size_t i = begin; i < end; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      out.xtilde(i - begin, j) = xtilde(i, j);
      out.mask(i - begin, j) = mask(i, j);
    }
  out.y.assign(y.begin() + static_cast<std::ptrdiff_t>(begin),
               y.begin() + static_cast<std::ptrdiff_t>(end));
  out.gaussian = gaussian;
  out.outcome = outcome;
  out.mechanism = mechanism;
  out.source = source;
  if (!x_complete.empty()) {
    out.x_complete = Matrix(end - begin, d);
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < d; ++j) out.x_complete(i - begin, j) = x_complete(i, j);
  }
  return out;
}

double calibrate_intercept(const std::function<double(double, double)>& prob,
                           double target_rate, const std::vector<double>& samples) {
  if (samples.empty()) throw ContractError("calibrate_intercept: empty calibration sample");
  auto mean_rate = [&](double gamma0) {
    double acc = 0.0;
    for (double s : samples) acc += prob(s, gamma0);
    return acc / static_cast<double>(samples.size());
  };
  double lo = kInterceptLo, hi = kInterceptHi;
  double rate_lo = mean_rate(lo), rate_hi = mean_rate(hi);
  if (rate_lo > target_rate || rate_hi < target_rate) {
    throw CalibrationError("calibrate_intercept: target rate " + std::to_string(target_rate) +
                           " outside achievable range [" + std::to_string(rate_lo) + ", " +
                           std::to_string(rate_hi) + "]");
  }
  double mid = 0.0;
  for (int step = 0; step < kMaxBisectionSteps; ++step) {
    mid = 0.5 * (lo + hi);
    const double r = mean_rate(mid);
    if (std::fabs(r - target_rate) <= kRateTolerance) return mid;
    if (r < target_rate) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return mid;
}

MechanismSpec draw_mcar_spec(double rate) {
  check_rate(rate);
  MechanismSpec spec;
  spec.kind = MechanismKind::kMcar;
  spec.rate = rate;
  return spec;
}

MechanismSpec draw_mar_logistic_spec(const Dataset& ds, double rate, Rng& rng) {
  check_rate(rate);
  const std::size_t d = ds.x.cols();
  if (d < 2) throw ContractError("draw_mar_logistic_spec: needs at least 2 covariates");

  MechanismSpec spec;
  spec.kind = MechanismKind::kMarLogistic;
  spec.rate = rate;
  MarLogisticParams& mp = spec.mar_logistic;

  // Random 30% subset masked completely at random.
  const auto j_count = static_cast<std::size_t>(0.3 * static_cast<double>(d));
  std::vector<std::size_t> perm(d);
  for (std::size_t i = 0; i < d; ++i) perm[i] = i;
  rng.shuffle(perm);
  mp.mcar_cols.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(j_count));
  std::sort(mp.mcar_cols.begin(), mp.mcar_cols.end());
  for (std::size_t j = 0; j < d; ++j) {
    if (!std::binary_search(mp.mcar_cols.begin(), mp.mcar_cols.end(), j)) {
      mp.logistic_cols.push_back(j);
    }
  }

  std::vector<double> means, sds;
  column_moments(ds, means, sds);
  mp.j_means.resize(j_count);
  mp.j_sds.resize(j_count);
  for (std::size_t a = 0; a < j_count; ++a) {
    mp.j_means[a] = means[mp.mcar_cols[a]];
    mp.j_sds[a] = std::max(sds[mp.mcar_cols[a]], 1e-12);
  }
  const Matrix corr = j_correlation(ds, mp.mcar_cols, means, sds);

  const std::size_t n_logistic = mp.logistic_cols.size();
  mp.slopes = Matrix(n_logistic, j_count);
  mp.scales.resize(n_logistic);
  mp.direction_norms.resize(n_logistic);
  mp.intercepts.assign(n_logistic, 0.0);

  std::vector<double> delta(j_count);
  for (std::size_t l = 0; l < n_logistic; ++l) {
    double v = 0.0;
    if (j_count > 0) {
      // Degenerate directions are redrawn; v = 0 would divide out the slope.
      for (int attempt = 0; attempt < 1000; ++attempt) {
        double norm2 = 0.0;
        for (double& x : delta) {
          x = rng.normal();
          norm2 += x * x;
        }
        if (std::sqrt(norm2) < 1e-8) continue;
        double q = 0.0;
        for (std::size_t a = 0; a < j_count; ++a) {
          double row = 0.0;
          for (std::size_t b = 0; b < j_count; ++b) row += corr(a, b) * delta[b];
          q += delta[a] * row;
        }
        if (q > 1e-16) {
          v = std::sqrt(q);
          break;
        }
      }
      if (v == 0.0) {
        throw CalibrationError("draw_mar_logistic_spec: could not draw a usable direction");
      }
    }
    const double s = rng.uniform(0.1, 0.5);
    mp.scales[l] = s;
    mp.direction_norms[l] = v;
    for (std::size_t a = 0; a < j_count; ++a) {
      mp.slopes(l, a) = j_count > 0 ? delta[a] / (s * v) : 0.0;
    }
  }

  // Calibrate each intercept against one realization of the MCAR stage, the
  // same zero-fill convention used when the mechanism is applied.
  const std::size_t n = ds.x.rows();
  Rng cal_rng = rng.fork("mar-logistic-calibration");
  Matrix j_mask(n, j_count);
  for (std::size_t i = 0; i < j_mask.size(); ++i) {
    j_mask[i] = cal_rng.uniform() < rate ? 1.0 : 0.0;
  }
  std::vector<double> index(n);
  for (std::size_t l = 0; l < n_logistic; ++l) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t a = 0; a < j_count; ++a) {
        if (j_mask(i, a) == 1.0) continue;
        const double z = (ds.x(i, mp.mcar_cols[a]) - mp.j_means[a]) / mp.j_sds[a];
        acc += z * mp.slopes(l, a);
      }
      index[i] = acc;
    }
    mp.intercepts[l] = calibrate_intercept(
        [](double s, double g0) { return sigmoid(s + g0); }, rate, index);
  }
  return spec;
}

double selfmask_probability(double x, double amplitude, double mu_tilde, double sigma_tilde) {
  const double z = (x - mu_tilde) / sigma_tilde;
  return amplitude * std::exp(-0.5 * z * z);
}

double selfmask_marginal_rate(double amplitude, double mu_tilde, double sigma_tilde,
                              double mean, double sd) {
  const double denom = sigma_tilde * sigma_tilde + sd * sd;
  const double gap = mean - mu_tilde;
  return amplitude * sigma_tilde / std::sqrt(denom) * std::exp(-0.5 * gap * gap / denom);
}

MechanismSpec draw_selfmask_spec(const Dataset& ds, double rate, double tilt) {
  check_rate(rate);
  if (rate <= 0.0) throw ContractError("draw_selfmask_spec: rate must be positive");
  MechanismSpec spec;
  spec.kind = MechanismKind::kSelfMask;
  spec.rate = rate;
  SelfMaskParams& sm = spec.selfmask;
  sm.tilt = tilt;

  std::vector<double> means, sds;
  column_moments(ds, means, sds);
  const std::size_t d = ds.x.cols();
  sm.amplitude.assign(d, 1.0);
  sm.mu_tilde.resize(d);
  sm.sigma_tilde.resize(d);

  // The bump mode sits |tilt| marginal standard deviations above (below,
  // for negative tilt) the column mean. With the amplitude pinned at 1 the
  // marginal rate is monotone in the bump width, so the width is solved by
  // bisection against the closed-form rate; every rate in (0, 1) is
  // reachable this way.
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::max(sds[j], 1e-12);
    sm.mu_tilde[j] = means[j] + tilt * sd;
    double lo = 1e-9 * sd, hi = sd;
    while (selfmask_marginal_rate(1.0, sm.mu_tilde[j], hi, means[j], sd) < rate) {
      hi *= 2.0;
      if (hi > 1e12 * sd) {
        throw CalibrationError("draw_selfmask_spec: rate " + std::to_string(rate) +
                               " unreachable for column " + std::to_string(j));
      }
    }
    for (int step = 0; step < 200; ++step) {
      const double mid = 0.5 * (lo + hi);
      if (selfmask_marginal_rate(1.0, sm.mu_tilde[j], mid, means[j], sd) < rate) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    sm.sigma_tilde[j] = 0.5 * (lo + hi);
  }
  return spec;
}

MechanismSpec draw_mar_y_spec(const Dataset& ds, double rate, double slope_scale, Rng& rng) {
  check_rate(rate);
  if (ds.y.empty()) throw ContractError("draw_mar_y_spec: outcome required");
  MechanismSpec spec;
  spec.kind = MechanismKind::kMarY;
  spec.rate = rate;
  MarYParams& my = spec.mar_y;

  const std::size_t n = ds.y.size();
  double m = 0.0;
  for (double v : ds.y) m += v;
  m /= static_cast<double>(n);
  double var = 0.0;
  for (double v : ds.y) var += (v - m) * (v - m);
  var /= static_cast<double>(n);
  const double sd_y = std::max(std::sqrt(var), 1e-12);

  const std::size_t d = ds.x.cols();
  my.slopes.resize(d);
  my.intercepts.resize(d);
  std::vector<double> index(n);
  for (std::size_t j = 0; j < d; ++j) {
    const double sign = rng.normal() >= 0.0 ? 1.0 : -1.0;
    my.slopes[j] = sign * slope_scale / sd_y;
    for (std::size_t i = 0; i < n; ++i) index[i] = ds.y[i] * my.slopes[j];
    my.intercepts[j] = calibrate_intercept(
        [](double s, double g0) { return sigmoid(s + g0); }, rate, index);
  }
  return spec;
}

MaskedDataset apply_mechanism(const MechanismSpec& spec,
                              const std::shared_ptr<const Dataset>& ds, Rng& rng) {
  const std::size_t n = ds->x.rows();
  const std::size_t d = ds->x.cols();
  Matrix mask(n, d, 0.0);

  switch (spec.kind) {
    case MechanismKind::kMcar: {
      for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng.uniform() < spec.rate ? 1.0 : 0.0;
      }
      break;
    }
    case MechanismKind::kMarLogistic: {
      const MarLogisticParams& mp = spec.mar_logistic;
      const std::size_t j_count = mp.mcar_cols.size();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < j_count; ++a) {
          if (rng.uniform() < spec.rate) mask(i, mp.mcar_cols[a]) = 1.0;
        }
      }
      for (std::size_t l = 0; l < mp.logistic_cols.size(); ++l) {
        for (std::size_t i = 0; i < n; ++i) {
          double acc = mp.intercepts[l];
          for (std::size_t a = 0; a < j_count; ++a) {
            if (mask(i, mp.mcar_cols[a]) == 1.0) continue;
            const double z = (ds->x(i, mp.mcar_cols[a]) - mp.j_means[a]) / mp.j_sds[a];
            acc += z * mp.slopes(l, a);
          }
          if (rng.uniform() < sigmoid(acc)) mask(i, mp.logistic_cols[l]) = 1.0;
        }
      }
      break;
    }
    case MechanismKind::kSelfMask: {
      const SelfMaskParams& sm = spec.selfmask;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          const double p = selfmask_probability(ds->x(i, j), sm.amplitude[j], sm.mu_tilde[j],
                                                sm.sigma_tilde[j]);
          if (rng.uniform() < p) mask(i, j) = 1.0;
        }
      }
      break;
    }
    case MechanismKind::kMarY: {
      const MarYParams& my = spec.mar_y;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          const double p = sigmoid(ds->y[i] * my.slopes[j] + my.intercepts[j]);
          if (rng.uniform() < p) mask(i, j) = 1.0;
        }
      }
      break;
    }
  }
  return make_masked(ds, std::move(mask), spec);
}

MaskedDataset apply_mcar(const std::shared_ptr<const Dataset>& ds, double rate, Rng& rng) {
  return apply_mechanism(draw_mcar_spec(rate), ds, rng);
}

MaskedDataset apply_mar_logistic(const std::shared_ptr<const Dataset>& ds, double rate,
                                 Rng& rng) {
  Rng draw_rng = rng.fork("draw");
  return apply_mechanism(draw_mar_logistic_spec(*ds, rate, draw_rng), ds, rng);
}

MaskedDataset apply_selfmask(const std::shared_ptr<const Dataset>& ds, double rate,
                             double tilt, Rng& rng) {
  return apply_mechanism(draw_selfmask_spec(*ds, rate, tilt), ds, rng);
}

MaskedDataset apply_mar_y(const std::shared_ptr<const Dataset>& ds, double rate, Rng& rng) {
  Rng draw_rng = rng.fork("draw");
  return apply_mechanism(draw_mar_y_spec(*ds, rate, 1.0, draw_rng), ds, rng);
}

double empirical_missing_rate(const MaskedDataset& md) {
  return sum(md.mask) / static_cast<double>(md.mask.size());
}

double empirical_missing_rate(const MaskedDataset& md, std::size_t column) {
  double acc = 0.0;
  for (std::size_t i = 0; i < md.rows(); ++i) acc += md.mask(i, column);
  return acc / static_cast<double>(md.rows());
}

}  // namespace misshift
