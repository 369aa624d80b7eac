#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace galqr {

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double log_2pi = 1.8378770664093454836;
inline constexpr double sqrt_2 = 1.4142135623730950488;
inline constexpr double inv_sqrt_2 = 0.70710678118654752440;
inline constexpr double sqrt_2_over_pi = 0.79788456080286535588;
inline constexpr double ln_10 = 2.3025850929940456840;
inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

/// log(1 - exp(x)) for x < 0, stable near both ends.
inline double log1mexp(double x) {
  if (x >= 0.0) {
    if (x == 0.0) return neg_inf;
    throw std::invalid_argument("log1mexp: argument must be <= 0");
  }
  static const double ln2 = std::log(2.0);
  if (x > -ln2) return std::log(-std::expm1(x));
  return std::log1p(-std::exp(x));
}

/// log(exp(a) + exp(b)) without overflow.
inline double log_sum_exp(double a, double b) {
  if (a == neg_inf) return b;
  if (b == neg_inf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

template <typename Iter>
double log_sum_exp(Iter first, Iter last) {
  double m = neg_inf;
  for (Iter it = first; it != last; ++it) m = std::max(m, static_cast<double>(*it));
  if (m == neg_inf) return neg_inf;
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Iter it = first; it != last; ++it) s += std::exp(static_cast<double>(*it) - m);
  return m + std::log(s);
}

inline double log_sum_exp(const std::vector<double>& v) {
  return log_sum_exp(v.begin(), v.end());
}

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x - 0.5 * log_2pi); }

inline double normal_logpdf(double x) { return -0.5 * x * x - 0.5 * log_2pi; }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * inv_sqrt_2); }

/// log Phi(x). erfc covers |x| up to ~25; beyond that the continued
/// asymptotic expansion of the Mills ratio keeps full precision down to
/// arguments of order -1e8 and further.
inline double log_normal_cdf(double x) {
  if (x >= 0.0) {
    double sf = 0.5 * std::erfc(x * inv_sqrt_2);
    return std::log1p(-sf);
  }
  double z = -x * inv_sqrt_2;  // z > 0
  if (z < 25.0) return std::log(0.5 * std::erfc(z));
  // Phi(x) = phi(x)/|x| * S, S = 1 - 1/x^2 + 3/x^4 - ...
  double inv2 = 1.0 / (x * x);
  double term = 1.0, s = 1.0;
  for (int n = 1; n <= 12; ++n) {
    term *= -(2.0 * n - 1.0) * inv2;
    s += term;
  }
  return normal_logpdf(x) - std::log(-x) + std::log(s);
}

/// log(Phi(hi) - Phi(lo)) for hi > lo, avoiding cancellation in either tail.
inline double log_normal_cdf_diff(double lo, double hi) {
  if (!(hi >= lo)) throw std::invalid_argument("log_normal_cdf_diff: hi < lo");
  if (hi == lo) return neg_inf;
  if (lo + hi < 0.0) {
    // both ends effectively in the lower tail: work with CDFs
    double la = log_normal_cdf(hi);
    double lb = log_normal_cdf(lo);
    return la + log1mexp(std::min(lb - la, 0.0));
  }
  // upper tail: work with survival functions Phi(-x)
  double la = log_normal_cdf(-lo);
  double lb = log_normal_cdf(-hi);
  return la + log1mexp(std::min(lb - la, 0.0));
}

/// Inverse standard normal CDF (Wichura's PPND16), |error| < 1e-15 over (0,1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("normal_quantile: p must lie in (0,1)");
  double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
              3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 5.40414211145054839510e-1);
  }
  return (q < 0.0) ? -val : val;
}

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

inline double log_choose(double n, double k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

/// log of the multivariate gamma function Gamma_d(a).
inline double log_mvgamma(int d, double a) {
  double s = 0.25 * d * (d - 1) * std::log(pi);
  for (int j = 1; j <= d; ++j) s += std::lgamma(a + 0.5 * (1 - j));
  return s;
}

inline double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("logit: p outside (0,1)");
  return std::log(p) - std::log1p(-p);
}

inline double inv_logit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double sq(double x) { return x * x; }

/// Bisection root of a monotone continuous f on [lo,hi] with f(lo)*f(hi) <= 0.
template <typename F>
double bisect(F f, double lo, double hi, double tol = 1e-13, int max_iter = 500) {
  double flo = f(lo), fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo < 0.0) == (fhi < 0.0))
    throw std::invalid_argument("bisect: endpoints do not bracket a root");
  for (int i = 0; i < max_iter; ++i) {
    double mid = 0.5 * (lo + hi);
    double fm = f(mid);
    if (fm == 0.0 || 0.5 * (hi - lo) < tol * (1.0 + std::abs(mid))) return mid;
    if ((fm < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace galqr
