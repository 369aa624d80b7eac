#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "galqr/math.hpp"
#include "galqr/mcmc.hpp"
#include "galqr/model.hpp"
#include "galqr/rng.hpp"

namespace galqr {

// ---------------------------------------------------------------------------
// Case-deletion influence via importance-sampled K-L divergence
// ---------------------------------------------------------------------------

/// K-L divergence between the full posterior and the posterior with one
/// observation removed, estimated from that observation's per-draw
/// log densities: kl = log((1/K) sum 1/P_k) + (1/K) sum log P_k.
inline double kl_influence(const std::vector<double>& log_p) {
  std::size_t k = log_p.size();
  if (k < 100) throw std::invalid_argument("kl_influence: need >= 100 draws");
  std::vector<double> neg(k);
  double mean_log = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!std::isfinite(log_p[i]))
      throw std::invalid_argument("kl_influence: non-finite log density");
    neg[i] = -log_p[i];
    mean_log += log_p[i];
  }
  mean_log /= static_cast<double>(k);
  double kl = log_sum_exp(neg.begin(), neg.end()) -
              std::log(static_cast<double>(k)) + mean_log;
  return kl;
}

/// Calibration of a unit-probability Bernoulli experiment whose success odds
/// are distorted by the measured divergence; 0.5 means no influence.
inline std::pair<double, bool> influence_flag(double kl) {
  if (!(kl >= 0.0)) kl = 0.0;
  double calibration = 0.5 * (1.0 + std::sqrt(1.0 - std::exp(-2.0 * kl)));
  return {calibration, calibration >= 0.999};
}

struct InfluenceRecord {
  std::string subject;
  double time = 0.0;
  int obs_index = 0;
  double kl = 0.0;
  double calibration = 0.5;
  bool influential = false;
};

/// Influence records for every observation from a draws-by-observations
/// matrix of pointwise log likelihoods.
inline std::vector<InfluenceRecord> influence_table(
    const Eigen::MatrixXd& pointwise, const std::vector<std::string>& subjects,
    const std::vector<double>& times) {
  int n = static_cast<int>(pointwise.cols());
  if (static_cast<int>(subjects.size()) != n || static_cast<int>(times.size()) != n)
    throw std::invalid_argument("influence_table: label length mismatch");
  std::vector<InfluenceRecord> out;
  out.reserve(n);
  std::vector<double> col(pointwise.rows());
  for (int o = 0; o < n; ++o) {
    for (int r = 0; r < pointwise.rows(); ++r) col[r] = pointwise(r, o);
    InfluenceRecord rec;
    rec.subject = subjects[o];
    rec.time = times[o];
    rec.obs_index = o;
    rec.kl = kl_influence(col);
    auto [cal, flag] = influence_flag(rec.kl);
    rec.calibration = cal;
    rec.influential = flag;
    out.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PSIS-LOO
// ---------------------------------------------------------------------------

struct GpdFit {
  double xi = 0.0;
  double sigma = 0.0;
  bool valid = false;
};

/// Probability-weighted-moment fit of the generalized Pareto distribution to
/// sorted nonnegative exceedances.
inline GpdFit gpd_fit_pwm(const std::vector<double>& exceedances_sorted) {
  GpdFit fit;
  std::size_t n = exceedances_sorted.size();
  if (n < 5) return fit;
  double a0 = 0.0, a1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double p = (static_cast<double>(i) + 1.0 - 0.35) / n;
    a0 += exceedances_sorted[i];
    a1 += (1.0 - p) * exceedances_sorted[i];
  }
  a0 /= n;
  a1 /= n;
  double denom = a0 - 2.0 * a1;
  if (!(a0 > 0.0) || !(denom > 0.0)) return fit;
  fit.xi = 2.0 - a0 / denom;
  fit.sigma = 2.0 * a0 * a1 / denom;
  fit.valid = fit.sigma > 0.0;
  return fit;
}

inline double gpd_quantile(double u, double xi, double sigma) {
  if (std::abs(xi) < 1e-12) return -sigma * std::log1p(-u);
  return sigma * (std::pow(1.0 - u, -xi) - 1.0) / xi;
}

struct LooReport {
  double elpd = 0.0;
  double looic = 0.0;
  std::vector<double> elpd_i;
  std::vector<double> khat;
  int high_khat_count = 0;
};

/// Leave-one-out expected log predictive density with Pareto-smoothed
/// importance weights. Per observation: raw log weights are the negated log
/// likelihoods; the top M = min(ceil(0.2K), ceil(3 sqrt(K))) weights are
/// replaced by generalized-Pareto quantiles fitted to their exceedances, then
/// capped at the raw maximum. khat is the fitted tail index (-inf when the
/// tail is degenerate and smoothing is skipped); khat > 0.7 is counted but
/// never fails.
inline LooReport psis_loo(const Eigen::MatrixXd& loglik) {
  int k = static_cast<int>(loglik.rows());
  int n = static_cast<int>(loglik.cols());
  if (k < 5 || n < 1) throw std::invalid_argument("psis_loo: need >= 5 draws");
  if (!loglik.allFinite())
    throw std::invalid_argument("psis_loo: non-finite log likelihood");

  LooReport rep;
  rep.elpd_i.resize(n);
  rep.khat.resize(n);
  int m = static_cast<int>(
      std::min(std::ceil(0.2 * k), std::ceil(3.0 * std::sqrt(static_cast<double>(k)))));
  m = std::min(m, k - 1);

  std::vector<double> lw(k);
  std::vector<int> idx(k);
  for (int o = 0; o < n; ++o) {
    double max_lw = neg_inf;
    for (int r = 0; r < k; ++r) {
      lw[r] = -loglik(r, o);
      max_lw = std::max(max_lw, lw[r]);
    }
    for (int r = 0; r < k; ++r) lw[r] -= max_lw;

    double khat = neg_inf;
    if (m >= 5) {
      for (int r = 0; r < k; ++r) idx[r] = r;
      std::nth_element(idx.begin(), idx.begin() + (k - m), idx.end(),
                       [&](int a, int b) { return lw[a] < lw[b]; });
      std::sort(idx.begin() + (k - m), idx.end(),
                [&](int a, int b) { return lw[a] < lw[b]; });
      double cutoff = lw[*std::max_element(
          idx.begin(), idx.begin() + (k - m),
          [&](int a, int b) { return lw[a] < lw[b]; })];
      double u = std::exp(cutoff);
      std::vector<double> exc(m);
      for (int z = 0; z < m; ++z) exc[z] = std::exp(lw[idx[k - m + z]]) - u;
      GpdFit fit = gpd_fit_pwm(exc);
      if (fit.valid) {
        khat = fit.xi;
        double cap = lw[idx[k - 1]];
        for (int z = 0; z < m; ++z) {
          double q = (z + 0.5) / m;
          double w = u + gpd_quantile(q, fit.xi, fit.sigma);
          lw[idx[k - m + z]] = std::min(std::log(w), cap);
        }
      }
    }
    rep.khat[o] = khat;
    if (khat > 0.7) rep.high_khat_count += 1;

    double num = neg_inf, den = neg_inf;
    for (int r = 0; r < k; ++r) {
      num = log_sum_exp(num, lw[r] + loglik(r, o));
      den = log_sum_exp(den, lw[r]);
    }
    rep.elpd_i[o] = num - den;
    rep.elpd += rep.elpd_i[o];
  }
  rep.looic = -2.0 * rep.elpd;
  return rep;
}

// ---------------------------------------------------------------------------
// Posterior predictive machinery and residual adequacy tests
// ---------------------------------------------------------------------------

/// S replicate datasets simulated from retained posterior draws, conditioning
/// on each draw's own random effects. Row s is one replicate over all
/// observations in dataset order. Draw indices stride evenly through the
/// stacked chains.
inline Eigen::MatrixXd posterior_predictive(const PosteriorDraws& draws,
                                            const ModelSpec& spec,
                                            const ModelData& md, int s,
                                            RngStream& rng) {
  if (s < 1) throw std::invalid_argument("posterior_predictive: s >= 1");
  if (!draws.config.save_random_effects)
    throw std::invalid_argument(
        "posterior_predictive: random-effect draws were not saved");
  Eigen::MatrixXd all = draws.stacked();
  int total = static_cast<int>(all.rows());
  if (total < 1) throw std::invalid_argument("posterior_predictive: no draws");

  int p = spec.n_fixed();
  int d = spec.random_dim;
  std::vector<int> beta_cols(p);
  for (int j = 0; j < p; ++j)
    beta_cols[j] = draws.col("beta" + std::to_string(j + 1));
  int sigma_col = draws.col("sigma");
  int gamma_col = spec.family != Family::al ? draws.col("gamma") : -1;
  int alpha_col = spec.family == Family::cgal ? draws.col("alpha") : -1;
  std::vector<std::vector<int>> b_cols(md.n_subjects, std::vector<int>(d));
  for (int i = 0; i < md.n_subjects; ++i)
    for (int kk = 0; kk < d; ++kk)
      b_cols[i][kk] =
          draws.col("b." + md.subject_ids[i] + "." + std::to_string(kk + 1));

  Eigen::MatrixXd sims(s, md.n_obs);
  Eigen::VectorXd beta(p), bi(d);
  for (int rep = 0; rep < s; ++rep) {
    int row = static_cast<int>((static_cast<long>(rep) * total) / s);
    for (int j = 0; j < p; ++j) beta[j] = all(row, beta_cols[j]);
    double sigma = all(row, sigma_col);
    double gamma = gamma_col >= 0 ? all(row, gamma_col) : 0.0;
    double alpha = alpha_col >= 0 ? all(row, alpha_col) : 0.0;
    for (int i = 0; i < md.n_subjects; ++i) {
      for (int kk = 0; kk < d; ++kk) bi[kk] = all(row, b_cols[i][kk]);
      for (int o = md.offset[i]; o < md.offset[i + 1]; ++o) {
        double mu = md.mu(spec, beta, bi, o);
        double y = 0.0;
        switch (spec.family) {
          case Family::al: y = al_sample({mu, sigma, spec.p0}, rng); break;
          case Family::gal:
            y = gal_sample({mu, sigma, gamma, spec.p0}, rng);
            break;
          case Family::cgal:
            y = cgal_sample({mu, sigma, gamma, spec.p0, alpha, spec.priors.tau0},
                            rng);
            break;
        }
        sims(rep, o) = y;
      }
    }
  }
  return sims;
}

/// Rank positions of each observation within its S predictive simulations,
/// uniform on (0,1) under a correct model; ties are smoothed with uniform
/// noise.
inline std::vector<double> scaled_residuals(const Eigen::MatrixXd& sims,
                                            const std::vector<double>& y,
                                            RngStream& rng) {
  int s = static_cast<int>(sims.rows());
  int n = static_cast<int>(sims.cols());
  if (static_cast<int>(y.size()) != n)
    throw std::invalid_argument("scaled_residuals: observation count mismatch");
  if (s < 1) throw std::invalid_argument("scaled_residuals: no simulations");
  std::vector<double> out(n);
  for (int o = 0; o < n; ++o) {
    int below = 0, ties = 0;
    for (int r = 0; r < s; ++r) {
      if (sims(r, o) < y[o]) ++below;
      else if (sims(r, o) == y[o]) ++ties;
    }
    out[o] = (below + rng.uniform() * (ties + 1)) / (s + 1.0);
  }
  return out;
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

namespace detail {

/// Kolmogorov distribution tail Q(lambda) = 2 sum_j (-1)^{j-1} exp(-2 j^2 lambda^2).
inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-8) return 1.0;
  double q = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    q += sign * std::exp(-2.0 * j * j * lambda * lambda);
    sign = -sign;
  }
  return std::clamp(2.0 * q, 0.0, 1.0);
}

}  // namespace detail

/// One-sample Kolmogorov-Smirnov test of the residuals against Uniform(0,1),
/// with the finite-sample-corrected asymptotic p-value.
inline KsResult ks_uniform_test(std::vector<double> residuals) {
  int n = static_cast<int>(residuals.size());
  if (n < 5) throw std::invalid_argument("ks_uniform_test: need >= 5 values");
  std::sort(residuals.begin(), residuals.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    double u = std::clamp(residuals[i], 0.0, 1.0);
    d = std::max(d, (i + 1.0) / n - u);
    d = std::max(d, u - static_cast<double>(i) / n);
  }
  double sn = std::sqrt(static_cast<double>(n));
  double lambda = (sn + 0.12 + 0.11 / sn) * d;
  return {d, detail::kolmogorov_q(lambda)};
}

/// Variance-ratio dispersion check: var of centered observed responses
/// against the replicate distribution of the same statistic, two-sided
/// empirical tail p-value.
inline double dispersion_test(const Eigen::MatrixXd& sims,
                              const std::vector<double>& y) {
  int s = static_cast<int>(sims.rows());
  int n = static_cast<int>(sims.cols());
  if (static_cast<int>(y.size()) != n)
    throw std::invalid_argument("dispersion_test: observation count mismatch");
  if (s < 2 || n < 2) throw std::invalid_argument("dispersion_test: too small");

  Eigen::VectorXd center = sims.colwise().mean();
  auto var_about_center = [&](auto&& value_at) {
    double mean = 0.0;
    for (int o = 0; o < n; ++o) mean += value_at(o) - center[o];
    mean /= n;
    double v = 0.0;
    for (int o = 0; o < n; ++o) v += sq(value_at(o) - center[o] - mean);
    return v / (n - 1);
  };

  double v_obs = var_about_center([&](int o) { return y[o]; });
  int c_lo = 0, c_hi = 0;
  for (int r = 0; r < s; ++r) {
    double v = var_about_center([&](int o) { return sims(r, o); });
    if (v <= v_obs) ++c_lo;
    if (v >= v_obs) ++c_hi;
  }
  double p = 2.0 * std::min((c_lo + 1.0) / (s + 1.0), (c_hi + 1.0) / (s + 1.0));
  return std::min(p, 1.0);
}

/// Exact two-sided binomial test for an excess (or deficit) of residuals on
/// the boundary bins, i.e. outside (1/(S+1), S/(S+1)).
inline double outlier_binomial_test(const std::vector<double>& residuals, int s) {
  int n = static_cast<int>(residuals.size());
  if (n < 1 || s < 2) throw std::invalid_argument("outlier_binomial_test: too small");
  double lo = 1.0 / (s + 1.0), hi = static_cast<double>(s) / (s + 1.0);
  int k = 0;
  for (double r : residuals)
    if (r <= lo || r >= hi) ++k;
  double q = 2.0 / (s + 1.0);
  double lq = std::log(q), l1q = std::log1p(-q);
  auto log_pmf = [&](int i) { return log_choose(n, i) + i * lq + (n - i) * l1q; };
  double lp_k = log_pmf(k);
  double p = 0.0;
  for (int i = 0; i <= n; ++i) {
    double lp = log_pmf(i);
    if (lp <= lp_k + 1e-12) p += std::exp(lp);
  }
  return std::min(p, 1.0);
}

struct ResidualReport {
  std::vector<double> residuals;
  KsResult ks;
  double p_uniform = 1.0;
  double p_dispersion = 1.0;
  double p_outlier = 1.0;
};

inline ResidualReport residual_report(const Eigen::MatrixXd& sims,
                                      const std::vector<double>& y,
                                      RngStream& rng) {
  ResidualReport rep;
  rep.residuals = scaled_residuals(sims, y, rng);
  rep.ks = ks_uniform_test(rep.residuals);
  rep.p_uniform = rep.ks.p_value;
  rep.p_dispersion = dispersion_test(sims, y);
  rep.p_outlier =
      outlier_binomial_test(rep.residuals, static_cast<int>(sims.rows()));
  return rep;
}

// ---------------------------------------------------------------------------
// Tail kurtosis from order statistics
// ---------------------------------------------------------------------------

/// Left- and right-tail L-statistic kurtosis of a sample. For even n the two
/// halves are the lower and upper n/2 order statistics; for odd n the median
/// observation contributes half weight to each side, which keeps the exact
/// swap identity under negation. Normal reference value ~= 0.4142 per side.
inline std::pair<double, double> lstat_kurtosis(std::vector<double> sample) {
  int n = static_cast<int>(sample.size());
  if (n < 8) throw std::invalid_argument("lstat_kurtosis: need >= 8 values");
  std::sort(sample.begin(), sample.end());

  double num_l = 0.0, num_r = 0.0, sum_l = 0.0, sum_r = 0.0, median;
  if (n % 2 == 0) {
    int h = n / 2;
    median = sample[h - 1];  // lower-middle order statistic X_(n/2)
    for (int i = 1; i <= h; ++i) {
      double x = sample[i - 1];
      num_l += ((4.0 * i - 2.0) / n - 1.0) * x;
      sum_l += x;
    }
    for (int i = h + 1; i <= n; ++i) {
      double x = sample[i - 1];
      num_r += ((4.0 * i - 2.0) / n - 3.0) * x;
      sum_r += x;
    }
    double phi_l = (2.0 / n) * num_l / (median - (2.0 / n) * sum_l);
    double phi_r = (2.0 / n) * num_r / ((2.0 / n) * sum_r - sample[h]);
    return {phi_l, phi_r};
  }
  int mid = (n + 1) / 2;  // 1-based index of the median
  median = sample[mid - 1];
  for (int i = 1; i < mid; ++i) {
    double x = sample[i - 1];
    num_l += ((4.0 * i - 2.0) / n - 1.0) * x;
    sum_l += x;
  }
  for (int i = mid + 1; i <= n; ++i) {
    double x = sample[i - 1];
    num_r += ((4.0 * i - 2.0) / n - 3.0) * x;
    sum_r += x;
  }
  num_l += 0.5 * ((4.0 * mid - 2.0) / n - 1.0) * median;
  sum_l += 0.5 * median;
  num_r += 0.5 * ((4.0 * mid - 2.0) / n - 3.0) * median;
  sum_r += 0.5 * median;
  double phi_l = (2.0 / n) * num_l / (median - (2.0 / n) * sum_l);
  double phi_r = (2.0 / n) * num_r / ((2.0 / n) * sum_r - median);
  return {phi_l, phi_r};
}

/// Moment-based sample skewness and kurtosis; kurtosis uses the m4/m2^2
/// convention (3 for the normal distribution).
inline std::pair<double, double> sample_skewness_kurtosis(
    const std::vector<double>& sample) {
  int n = static_cast<int>(sample.size());
  if (n < 4)
    throw std::invalid_argument("sample_skewness_kurtosis: need >= 4 values");
  double mean = 0.0;
  for (double x : sample) mean += x;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : sample) {
    double d = x - mean;
    double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 0.0))
    throw std::invalid_argument("sample_skewness_kurtosis: zero variance");
  return {m3 / std::pow(m2, 1.5), m4 / (m2 * m2)};
}

}  // namespace galqr
