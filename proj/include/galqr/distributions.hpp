#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "galqr/math.hpp"
#include "galqr/quadrature.hpp"
#include "galqr/rng.hpp"

namespace galqr {

/// Quantile-check loss: u * (p0 - 1{u < 0}).
inline double rho(double u, double p0) { return u * (p0 - (u < 0.0 ? 1.0 : 0.0)); }

// ---------------------------------------------------------------------------
// Asymmetric Laplace
// ---------------------------------------------------------------------------

struct AlParams {
  double mu = 0.0;
  double sigma = 1.0;
  double p0 = 0.5;

  void validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("AlParams: sigma must be > 0");
    if (!(p0 > 0.0 && p0 < 1.0))
      throw std::invalid_argument("AlParams: p0 must lie in (0,1)");
  }
};

struct AlMixtureCoeffs {
  double theta1;     // (1-2p0)/(p0(1-p0))
  double theta2_sq;  // 2/(p0(1-p0))
};

inline AlMixtureCoeffs al_mixture_coeffs(double p0) {
  if (!(p0 > 0.0 && p0 < 1.0))
    throw std::invalid_argument("al_mixture_coeffs: p0 must lie in (0,1)");
  double v = p0 * (1.0 - p0);
  return {(1.0 - 2.0 * p0) / v, 2.0 / v};
}

class AlKernel {
 public:
  AlKernel(double sigma, double p0) : sigma_(sigma), p0_(p0) {
    AlParams{0.0, sigma, p0}.validate();
    log_norm_ = std::log(p0 * (1.0 - p0) / sigma);
  }

  /// Log density of the residual r = y - mu.
  double logpdf(double r) const { return log_norm_ - rho(r / sigma_, p0_); }

 private:
  double sigma_, p0_, log_norm_;
};

inline double al_logpdf(double y, const AlParams& par) {
  par.validate();
  return AlKernel(par.sigma, par.p0).logpdf(y - par.mu);
}

inline double al_cdf(double y, const AlParams& par) {
  par.validate();
  double r = (y - par.mu) / par.sigma;
  if (r <= 0.0) return par.p0 * std::exp((1.0 - par.p0) * r);
  return 1.0 - (1.0 - par.p0) * std::exp(-par.p0 * r);
}

inline double al_sample(const AlParams& par, RngStream& rng) {
  par.validate();
  auto th = al_mixture_coeffs(par.p0);
  double z = rng.exponential();
  double eps = rng.normal();
  return par.mu + par.sigma * (th.theta1 * z + std::sqrt(th.theta2_sq * z) * eps);
}

// ---------------------------------------------------------------------------
// Generalized asymmetric Laplace (Gaussian-mode extension via shape gamma)
// ---------------------------------------------------------------------------

/// g(gamma) = 2 Phi(-|gamma|) exp(gamma^2/2); decreases from 1 at 0 toward 0.
inline double gal_log_g(double gamma) {
  return std::log(2.0) + log_normal_cdf(-std::abs(gamma)) + 0.5 * gamma * gamma;
}

inline double gal_g(double gamma) { return std::exp(gal_log_g(gamma)); }

struct GammaBounds {
  double lower;  // < 0
  double upper;  // > 0
};

/// Admissible open interval for gamma at quantile level p0:
/// g(upper) = p0 on the positive side, g(-lower) = 1 - p0 on the negative side.
inline GammaBounds gamma_bounds(double p0) {
  if (!(p0 > 0.0 && p0 < 1.0))
    throw std::invalid_argument("gamma_bounds: p0 must lie in (0,1)");
  auto root_of_g = [](double target) {
    double log_t = std::log(target);
    double hi = 40.0;
    while (gal_log_g(hi) > log_t) hi *= 2.0;
    return bisect([&](double x) { return gal_log_g(x) - log_t; }, 0.0, hi, 1e-14);
  };
  return {-root_of_g(1.0 - p0), root_of_g(p0)};
}

/// Component skewness p(gamma, p0); equals p0 at gamma = 0 and hits {0,1}
/// exactly at the admissible boundary, so p in (0,1) certifies admissibility.
inline double gal_skew_p(double gamma, double p0) {
  if (!(p0 > 0.0 && p0 < 1.0))
    throw std::invalid_argument("gal_skew_p: p0 must lie in (0,1)");
  if (gamma == 0.0) return p0;
  double ind = gamma < 0.0 ? 1.0 : 0.0;
  double p = ind + (p0 - ind) * std::exp(-gal_log_g(gamma));
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("gal_skew_p: gamma outside admissible bounds");
  return p;
}

struct GalParams {
  double mu = 0.0;
  double sigma = 1.0;
  double gamma = 0.0;
  double p0 = 0.5;

  void validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("GalParams: sigma must be > 0");
    if (!(p0 > 0.0 && p0 < 1.0))
      throw std::invalid_argument("GalParams: p0 must lie in (0,1)");
    gal_skew_p(gamma, p0);  // throws when gamma is out of bounds
  }
};

struct GalMixtureCoeffs {
  double coef_a;  // (1-2p)/(p(1-p))
  double coef_b;  // 2/(p(1-p))
  double coef_c;  // 1/(1{gamma>0} - p)
};

inline GalMixtureCoeffs gal_mixture_coeffs(double gamma, double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("gal_mixture_coeffs: p must lie in (0,1)");
  double v = p * (1.0 - p);
  double c = 1.0 / ((gamma > 0.0 ? 1.0 : 0.0) - p);
  return {(1.0 - 2.0 * p) / v, 2.0 / v, c};
}

namespace detail {

/// log Phi(x) + x^2/2, with the quadratic cancelled analytically deep in the
/// lower tail so the sum stays accurate for arbitrarily negative x.
inline double log_phi_plus_half_sq(double x) {
  if (x >= -25.0) return log_normal_cdf(x) + 0.5 * x * x;
  double inv2 = 1.0 / (x * x);
  double term = 1.0, s = 1.0;
  for (int n = 1; n <= 12; ++n) {
    term *= -(2.0 * n - 1.0) * inv2;
    s += term;
  }
  return -std::log(-x) - 0.5 * log_2pi + std::log(s);
}

}  // namespace detail

/// Precomputed evaluator for the residual density of a GAL(sigma, gamma, p0)
/// error at a given quantile level. gamma == 0 falls back to the AL kernel.
class GalKernel {
 public:
  GalKernel(double sigma, double gamma, double p0)
      : sigma_(sigma), gamma_(gamma), p0_(p0), al_(sigma, p0) {
    GalParams{0.0, sigma, gamma, p0}.validate();
    if (gamma == 0.0) {
      use_al_ = true;
      return;
    }
    p_ = gal_skew_p(gamma, p0);
    // borderline skewness degenerates the density; reject rather than overflow
    if (p_ < 1e-14 || p_ > 1.0 - 1e-14) {
      degenerate_ = true;
      return;
    }
    pgp_ = p_ - (gamma > 0.0 ? 1.0 : 0.0);
    pgm_ = p_ - (gamma < 0.0 ? 1.0 : 0.0);
    ag_ = std::abs(gamma);
    b2_ = (pgm_ / pgp_) * ag_;  // always negative
    lphsq_b2_ = detail::log_phi_plus_half_sq(b2_);
    log_norm_ = std::log(2.0 * p_ * (1.0 - p_) / sigma_);
  }

  bool degenerate() const { return degenerate_; }
  double skew_p() const { return use_al_ ? p0_ : p_; }

  /// Log density of the residual r = y - mu.
  double logpdf(double r) const {
    if (use_al_) return al_.logpdf(r);
    if (degenerate_) return neg_inf;
    double ys = r / sigma_;
    bool same_side = ys / gamma_ > 0.0;

    double log_t2 =
        -pgp_ * ys + 0.5 * gamma_ * gamma_ +
        log_normal_cdf(-ag_ + (same_side ? pgp_ * ys / ag_ : 0.0));

    if (!same_side) return log_norm_ + log_t2;

    // T1 = [Phi(b1) - Phi(b2)] exp(-pgm*ys + b2^2/2) with b1 = b2 + eps;
    // exp(b2^2/2) is folded into each Phi analytically to dodge overflow.
    // log Phi(b1) + b1^2/2 - eps*b2 - eps^2/2 == log Phi(b1) + b2^2/2, and the
    // right-hand form avoids cancellation when eps is huge (gamma near zero).
    double eps = -pgp_ * ys / ag_;  // > 0 on this side
    double b1 = b2_ + eps;
    double a1 = b1 >= -25.0
                    ? log_normal_cdf(b1) + 0.5 * b2_ * b2_
                    : detail::log_phi_plus_half_sq(b1) - eps * b2_ -
                          0.5 * eps * eps;
    double a2 = lphsq_b2_;
    double log_t1;
    double delta = a2 - a1;
    if (delta < -1e-8) {
      log_t1 = -pgm_ * ys + a1 + log1mexp(delta);
    } else {
      // Phi(b1)-Phi(b2) below floating-point resolution: midpoint derivative
      log_t1 = -pgm_ * ys + std::log(eps) - 0.5 * log_2pi -
               0.5 * eps * (b2_ + 0.25 * eps);
    }
    return log_norm_ + log_sum_exp(log_t1, log_t2);
  }

 private:
  double sigma_, gamma_, p0_;
  AlKernel al_;
  bool use_al_ = false;
  bool degenerate_ = false;
  double p_ = 0.0, pgp_ = 0.0, pgm_ = 0.0, ag_ = 0.0, b2_ = 0.0;
  double lphsq_b2_ = 0.0, log_norm_ = 0.0;
};

inline double gal_logpdf(double y, const GalParams& par) {
  return GalKernel(par.sigma, par.gamma, par.p0).logpdf(y - par.mu);
}

inline double gal_pdf(double y, const GalParams& par) {
  return std::exp(gal_logpdf(y, par));
}

inline double gal_sample(const GalParams& par, RngStream& rng) {
  par.validate();
  if (par.gamma == 0.0) return al_sample({par.mu, par.sigma, par.p0}, rng);
  double p = gal_skew_p(par.gamma, par.p0);
  auto co = gal_mixture_coeffs(par.gamma, p);
  double s = std::abs(rng.normal());
  double z = rng.exponential();
  double eps = rng.normal();
  return par.mu + par.sigma * (co.coef_c * std::abs(par.gamma) * s + co.coef_a * z +
                               std::sqrt(co.coef_b * z) * eps);
}

/// CDF of a GAL distribution by adaptive quadrature of the density.
/// The effective support is bracketed by walking out from mu until the log
/// density falls 60 nats below its value at mu; integration runs from the
/// nearer bracket so both tails keep relative accuracy.
class GalCdf {
 public:
  explicit GalCdf(const GalParams& par)
      : par_(par), kernel_(par.sigma, par.gamma, par.p0) {
    par.validate();
    if (kernel_.degenerate())
      throw std::invalid_argument("GalCdf: degenerate shape parameter");
    double log_f_mu = kernel_.logpdf(0.0);
    double drop = log_f_mu - 60.0;
    auto walk = [&](double direction) {
      double step = par_.sigma;
      double x = direction * step;
      while (kernel_.logpdf(x) > drop) {
        step *= 2.0;
        x += direction * step;
        if (step > 1e12 * par_.sigma)
          throw QuadratureFailure("GalCdf: tail bracket not found");
      }
      return x;
    };
    lb_ = walk(-1.0);
    ub_ = walk(+1.0);
  }

  double lower_bound() const { return par_.mu + lb_; }
  double upper_bound() const { return par_.mu + ub_; }

  double operator()(double y) const {
    double r = y - par_.mu;
    auto f = [&](double x) { return std::exp(kernel_.logpdf(x)); };
    if (r <= lb_) return 0.0;
    if (r >= ub_) return 1.0;
    if (r <= 0.0) return clamp01(integrate(f, lb_, r, 1e-10, 1e-15));
    return clamp01(1.0 - integrate(f, r, ub_, 1e-10, 1e-15));
  }

  /// CDF at an ascending grid of points, sharing quadrature across panels.
  std::vector<double> grid(const std::vector<double>& ys_ascending) const {
    std::size_t n = ys_ascending.size();
    for (std::size_t i = 1; i < n; ++i)
      if (ys_ascending[i] < ys_ascending[i - 1])
        throw std::invalid_argument("GalCdf::grid: points must be ascending");
    auto f = [&](double x) { return std::exp(kernel_.logpdf(x)); };
    std::vector<double> out(n);
    // lower portion: accumulate from the left bracket up to mu
    std::size_t split = 0;
    while (split < n && ys_ascending[split] - par_.mu <= 0.0) ++split;
    double acc = 0.0;
    double prev = lb_;
    for (std::size_t i = 0; i < split; ++i) {
      double r = std::max(ys_ascending[i] - par_.mu, lb_);
      if (r > prev) acc += integrate(f, prev, r, 1e-10, 1e-15);
      prev = std::max(prev, r);
      out[i] = clamp01(acc);
    }
    // upper portion: accumulate survival from the right bracket downward
    double surv = 0.0;
    prev = ub_;
    for (std::size_t i = n; i-- > split;) {
      double r = std::min(ys_ascending[i] - par_.mu, ub_);
      if (r < prev) surv += integrate(f, r, prev, 1e-10, 1e-15);
      prev = std::min(prev, r);
      out[i] = clamp01(1.0 - surv);
    }
    return out;
  }

 private:
  static double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

  GalParams par_;
  GalKernel kernel_;
  double lb_ = 0.0, ub_ = 0.0;
};

inline double gal_cdf(double y, const GalParams& par) { return GalCdf(par)(y); }

// ---------------------------------------------------------------------------
// Contaminated GAL: two GAL components sharing mu/gamma/p0, the second with
// scale inflated by tau0, mixed with weight alpha.
// ---------------------------------------------------------------------------

struct CgalParams {
  double mu = 0.0;
  double sigma = 1.0;
  double gamma = 0.0;
  double p0 = 0.5;
  double alpha = 0.0;
  double tau0 = 10.0;

  GalParams component(int contaminated) const {
    return {mu, contaminated ? sigma * tau0 : sigma, gamma, p0};
  }

  void validate() const {
    component(0).validate();
    if (!(alpha >= 0.0 && alpha < 1.0))
      throw std::invalid_argument("CgalParams: alpha must lie in [0,1)");
    if (!(tau0 >= 1.0)) throw std::invalid_argument("CgalParams: tau0 must be >= 1");
  }
};

class CgalKernel {
 public:
  CgalKernel(double sigma, double gamma, double p0, double alpha, double tau0)
      : clean_(sigma, gamma, p0), wide_(sigma * tau0, gamma, p0), alpha_(alpha) {
    CgalParams{0.0, sigma, gamma, p0, alpha, tau0}.validate();
    log_alpha_ = alpha > 0.0 ? std::log(alpha) : neg_inf;
    log_1m_alpha_ = std::log1p(-alpha);
  }

  bool degenerate() const { return clean_.degenerate(); }

  /// Marginal log density of the residual, contamination summed out.
  double logpdf(double r) const {
    if (alpha_ == 0.0) return clean_.logpdf(r);
    return log_sum_exp(log_1m_alpha_ + clean_.logpdf(r),
                       log_alpha_ + wide_.logpdf(r));
  }

  /// Conditional log density given the contamination indicator.
  double logpdf_component(double r, int contaminated) const {
    return contaminated ? wide_.logpdf(r) : clean_.logpdf(r);
  }

  double log_alpha() const { return log_alpha_; }
  double log_1m_alpha() const { return log_1m_alpha_; }

 private:
  GalKernel clean_, wide_;
  double alpha_, log_alpha_, log_1m_alpha_;
};

inline double cgal_logpdf(double y, const CgalParams& par) {
  return CgalKernel(par.sigma, par.gamma, par.p0, par.alpha, par.tau0)
      .logpdf(y - par.mu);
}

inline double cgal_pdf(double y, const CgalParams& par) {
  return std::exp(cgal_logpdf(y, par));
}

inline double cgal_cdf(double y, const CgalParams& par) {
  par.validate();
  double clean = gal_cdf(y, par.component(0));
  if (par.alpha == 0.0) return clean;
  return (1.0 - par.alpha) * clean + par.alpha * gal_cdf(y, par.component(1));
}

inline double cgal_sample(const CgalParams& par, RngStream& rng) {
  par.validate();
  int contaminated = par.alpha > 0.0 ? rng.bernoulli(par.alpha) : 0;
  return gal_sample(par.component(contaminated), rng);
}

}  // namespace galqr
