#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "galqr/math.hpp"
#include "galqr/model.hpp"
#include "galqr/parallel.hpp"
#include "galqr/rng.hpp"

namespace galqr {

struct SamplerConfig {
  int n_chains = 4;
  int n_adapt = 2000;
  int n_burnin = 3000;
  int n_iter = 10000;
  int thin = 5;
  double target_accept_scalar = 0.44;
  double target_accept_block = 0.234;
  std::uint64_t seed = 0;
  bool ordering_constraint = true;
  bool augmented = true;           // cGAL indicator augmentation vs marginal MH
  bool save_random_effects = true;
  bool save_pointwise = false;
  double jitter = 0.5;             // overdispersion of chain starting points
  int n_threads = 0;               // 0 = one thread per chain up to hardware

  void validate() const {
    if (n_chains < 1 || n_adapt < 1 || n_burnin < 1 || n_iter < 1 || thin < 1)
      throw std::invalid_argument("SamplerConfig: all counts must be >= 1");
    if (n_iter % thin != 0)
      throw std::invalid_argument("SamplerConfig: n_iter must be divisible by thin");
    if (!(target_accept_scalar > 0.0 && target_accept_scalar < 1.0) ||
        !(target_accept_block > 0.0 && target_accept_block < 1.0))
      throw std::invalid_argument("SamplerConfig: target acceptance in (0,1)");
    if (!(jitter >= 0.0))
      throw std::invalid_argument("SamplerConfig: jitter must be >= 0");
  }
};

struct AcceptanceEntry {
  std::string block;
  double rate;
};

struct PosteriorDraws {
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> chains;     // per chain, retained x names
  std::vector<Eigen::MatrixXd> pointwise;  // per chain, retained x n_obs (optional)
  std::vector<double> inclusion_prob;      // per obs, cGAL only
  std::vector<std::vector<AcceptanceEntry>> acceptance;  // per chain
  std::vector<std::string> obs_subject;
  std::vector<double> obs_time;
  SamplerConfig config;
  int n_fixed = 0;
  int random_dim = 0;
  int n_subjects = 0;

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("PosteriorDraws: no column named '" + name + "'");
  }

  bool has(const std::string& name) const {
    for (const auto& n : names)
      if (n == name) return true;
    return false;
  }

  int retained_per_chain() const {
    return chains.empty() ? 0 : static_cast<int>(chains[0].rows());
  }

  /// All chains stacked in chain order.
  Eigen::MatrixXd stacked() const {
    int rows = 0;
    for (const auto& c : chains) rows += static_cast<int>(c.rows());
    Eigen::MatrixXd out(rows, names.size());
    int at = 0;
    for (const auto& c : chains) {
      out.middleRows(at, c.rows()) = c;
      at += static_cast<int>(c.rows());
    }
    return out;
  }

  std::vector<Eigen::VectorXd> chain_columns(const std::string& name) const {
    int j = col(name);
    std::vector<Eigen::VectorXd> out;
    out.reserve(chains.size());
    for (const auto& c : chains) out.push_back(c.col(j));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Multivariate sampling helpers
// ---------------------------------------------------------------------------

inline Eigen::VectorXd mvn_sample_chol(const Eigen::MatrixXd& chol_lower,
                                       RngStream& rng) {
  Eigen::VectorXd z(chol_lower.rows());
  for (int i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return chol_lower * z;
}

/// Wishart(df, scale) draw by the Bartlett decomposition.
inline Eigen::MatrixXd wishart_sample(double df, const Eigen::MatrixXd& scale,
                                      RngStream& rng) {
  int d = static_cast<int>(scale.rows());
  if (!(df > d - 1))
    throw std::invalid_argument("wishart_sample: df must exceed d-1");
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("wishart_sample: scale not SPD");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    a(i, i) = std::sqrt(rng.chi_square(df - i));
    for (int j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  Eigen::MatrixXd m = llt.matrixL() * a;
  return m * m.transpose();
}

// ---------------------------------------------------------------------------
// Convergence and summary statistics
// ---------------------------------------------------------------------------

/// Split-chain potential scale reduction factor. Each chain is halved; the
/// usual between/within variance ratio is computed over the 2m half-chains.
inline double split_rhat(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("split_rhat: need >= 2 chains");
  std::vector<Eigen::VectorXd> halves;
  for (const auto& c : chains) {
    int m = static_cast<int>(c.size()) / 2;
    if (m < 2) throw std::invalid_argument("split_rhat: need >= 4 draws per chain");
    halves.push_back(c.head(m));
    halves.push_back(c.segment(m, m));
  }
  int j = static_cast<int>(halves.size());
  int m = static_cast<int>(halves[0].size());
  Eigen::VectorXd means(j);
  Eigen::VectorXd vars(j);
  for (int k = 0; k < j; ++k) {
    means[k] = halves[k].mean();
    vars[k] = (halves[k].array() - means[k]).square().sum() / (m - 1);
  }
  double grand = means.mean();
  double b = m * (means.array() - grand).square().sum() / (j - 1);
  double w = vars.mean();
  if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  double var_plus = (m - 1.0) / m * w + b / m;
  return std::sqrt(var_plus / w);
}

/// Effective sample size via per-chain autocovariances combined with Geyer's
/// initial monotone positive sequence.
inline double ess(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.empty()) throw std::invalid_argument("ess: no chains");
  int m = static_cast<int>(chains.size());
  int n = static_cast<int>(chains[0].size());
  if (n < 4) throw std::invalid_argument("ess: need >= 4 draws");
  double total = static_cast<double>(m) * n;

  Eigen::VectorXd means(m), vars(m);
  for (int c = 0; c < m; ++c) {
    means[c] = chains[c].mean();
    vars[c] = (chains[c].array() - means[c]).square().sum() / (n - 1);
  }
  double w = vars.mean();
  double var_plus = (n - 1.0) / n * w;
  if (m > 1) {
    double grand = means.mean();
    double b = n * (means.array() - grand).square().sum() / (m - 1);
    var_plus += b / n;
  }
  if (var_plus <= 0.0) return total;

  auto mean_acov = [&](int lag) {
    double s = 0.0;
    for (int c = 0; c < m; ++c) {
      double a = 0.0;
      for (int k = 0; k + lag < n; ++k)
        a += (chains[c][k] - means[c]) * (chains[c][k + lag] - means[c]);
      s += a / n;
    }
    return s / m;
  };

  // Geyer pairing: sum rho_{2k} + rho_{2k+1}, truncated at the first negative
  // pair and forced monotone nonincreasing; rho_0 = 1 by convention.
  int max_lag = std::min(n - 4, 2000);
  double rho1 = 1.0 - (w - mean_acov(1)) / var_plus;
  double prev_pair = std::max(1.0 + rho1, 0.0);
  double tau = prev_pair;
  for (int t = 2; t + 1 <= max_lag; t += 2) {
    double r1 = 1.0 - (w - mean_acov(t)) / var_plus;
    double r2 = 1.0 - (w - mean_acov(t + 1)) / var_plus;
    double p = r1 + r2;
    if (p < 0.0) break;
    p = std::min(p, prev_pair);
    tau += p;
    prev_pair = p;
  }
  double sum_rho = std::max(2.0 * tau - 1.0, 1.0);
  return std::min(total / sum_rho, total);
}

/// Shortest contiguous window containing ceil(mass*n) of the sorted draws;
/// ties resolved toward the lowest start index.
inline std::pair<double, double> hpd_interval(const std::vector<double>& sorted_draws,
                                              double mass = 0.95) {
  int n = static_cast<int>(sorted_draws.size());
  if (n < 20) throw std::invalid_argument("hpd_interval: need >= 20 draws");
  if (!(mass > 0.0 && mass <= 1.0))
    throw std::invalid_argument("hpd_interval: mass in (0,1]");
  int k = static_cast<int>(std::ceil(mass * n));
  k = std::min(std::max(k, 1), n);
  int best = 0;
  double best_width = std::numeric_limits<double>::infinity();
  for (int i = 0; i + k <= n; ++i) {
    double width = sorted_draws[i + k - 1] - sorted_draws[i];
    if (width < best_width) {
      best_width = width;
      best = i;
    }
  }
  return {sorted_draws[best], sorted_draws[best + k - 1]};
}

inline double median_of_sorted(const std::vector<double>& v) {
  std::size_t n = v.size();
  if (n == 0) throw std::invalid_argument("median: empty");
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct SummaryRow {
  std::string name;
  double median, hpd_lo, hpd_hi, rhat, ess;
};

struct ConvergenceReport {
  double max_rhat = 0.0;
  bool converged = false;
  std::vector<SummaryRow> rows;
};

/// One row per tracked model parameter (random-effect columns are skipped;
/// they remain available in the draws themselves).
inline std::vector<SummaryRow> posterior_summary(const PosteriorDraws& draws) {
  if (draws.chains.empty()) throw std::invalid_argument("posterior_summary: empty");
  std::vector<SummaryRow> rows;
  for (const auto& name : draws.names) {
    if (name.rfind("b.", 0) == 0) continue;
    auto cols = draws.chain_columns(name);
    std::vector<double> all;
    for (const auto& c : cols) all.insert(all.end(), c.data(), c.data() + c.size());
    std::sort(all.begin(), all.end());
    auto [lo, hi] = hpd_interval(all, 0.95);
    double rhat = cols.size() >= 2 ? split_rhat(cols)
                                   : std::numeric_limits<double>::quiet_NaN();
    rows.push_back({name, median_of_sorted(all), lo, hi, rhat, ess(cols)});
  }
  return rows;
}

inline ConvergenceReport convergence_report(const PosteriorDraws& draws) {
  ConvergenceReport rep;
  rep.rows = posterior_summary(draws);
  for (const auto& r : rep.rows)
    if (std::isfinite(r.rhat)) rep.max_rhat = std::max(rep.max_rhat, r.rhat);
  rep.converged = rep.max_rhat < 1.05;
  return rep;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

/// Least squares of z on (1, t) with a ridge guard for degenerate designs.
inline std::pair<double, double> line_fit(const std::vector<double>& t,
                                          const std::vector<double>& z) {
  double n = static_cast<double>(t.size());
  double st = 0, sz = 0, stt = 0, stz = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    st += t[i];
    sz += z[i];
    stt += t[i] * t[i];
    stz += t[i] * z[i];
  }
  double det = n * stt - st * st + 1e-8;
  double slope = (n * stz - st * sz) / det;
  double intercept = (sz - slope * st) / std::max(n, 1.0);
  return {intercept, slope};
}

}  // namespace detail

/// Crude overdispersed starting state. jitter_scale 0 gives the deterministic
/// center (ordinary least squares for the linear link).
inline ParamState initialize_state(const ModelSpec& spec,
                                   const LongitudinalDataset& data, RngStream& rng,
                                   double jitter_scale = 0.5,
                                   bool ordering = true) {
  ModelData md(spec, data);
  int p = spec.n_fixed();
  int d = spec.random_dim;
  ParamState st;
  st.beta = Eigen::VectorXd::Zero(p);

  if (spec.is_biphasic()) {
    const auto& bp = std::get<BiphasicLink>(spec.link);
    // split observations at the median time; each half is roughly one phase
    std::vector<double> ts(md.t.begin(), md.t.end());
    std::sort(ts.begin(), ts.end());
    double t_med = ts[ts.size() / 2];
    std::vector<double> te, ze, tl, zl;
    for (int o = 0; o < md.n_obs; ++o) {
      double z = md.y[o] * ln_10;
      if (md.t[o] <= t_med) {
        te.push_back(md.t[o]);
        ze.push_back(z);
      } else {
        tl.push_back(md.t[o]);
        zl.push_back(z);
      }
    }
    auto [a_early, b_early] = detail::line_fit(te, ze);
    st.beta[0] = a_early;
    st.beta[1] = std::max(-b_early, 0.05);
    if (!spec.reduced_biphasic()) {
      auto [a_late, b_late] = detail::line_fit(tl, zl);
      st.beta[2] = a_late;
      st.beta[3] = std::max(-b_late, 1e-3);
      st.beta[4] = 0.0;
    }
    for (int j = 0; j < p; ++j)
      st.beta[j] += jitter_scale * 0.1 * std::max(1.0, std::abs(st.beta[j])) *
                    rng.normal() * 0.5;
    // ordered decay rates: first phase strictly faster at the start
    if (ordering) {
      double lambda2_ref = spec.reduced_biphasic() ? bp.beta4_fixed : st.beta[3];
      if (spec.random_dim == 4) {
        double cd4_med;
        {
          std::vector<double> c(md.cd4.begin(), md.cd4.end());
          std::sort(c.begin(), c.end());
          cd4_med = c[c.size() / 2];
        }
        lambda2_ref = st.beta[3] + st.beta[4] * cd4_med;
      }
      if (st.beta[1] <= lambda2_ref) st.beta[1] = lambda2_ref + 0.5;
    }
  } else {
    const Eigen::MatrixXd& x = md.design;
    Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(md.y.data(), md.n_obs);
    st.beta = x.colPivHouseholderQr().solve(yv);
    for (int j = 0; j < p; ++j)
      st.beta[j] += jitter_scale * 0.1 * std::max(1.0, std::abs(st.beta[j])) *
                    rng.normal() * 0.5;
  }

  st.b.assign(md.n_subjects, Eigen::VectorXd::Zero(d));
  for (auto& bi : st.b)
    for (int k = 0; k < d; ++k) bi[k] = jitter_scale * 0.1 * rng.normal();

  // per-subject decay ordering at initialization
  if (ordering && spec.is_biphasic()) {
    const auto& bp = std::get<BiphasicLink>(spec.link);
    for (int i = 0; i < md.n_subjects; ++i) {
      double lambda1 = st.beta[1] + st.b[i][1];
      double max_lambda2 = -std::numeric_limits<double>::infinity();
      if (spec.reduced_biphasic()) {
        max_lambda2 = bp.beta4_fixed;
      } else {
        for (int o = md.offset[i]; o < md.offset[i + 1]; ++o)
          max_lambda2 = std::max(
              max_lambda2, st.beta[3] + st.beta[4] * md.cd4[o] + st.b[i][3]);
      }
      if (lambda1 <= max_lambda2)
        st.b[i][1] = max_lambda2 - st.beta[1] + 0.1 + std::abs(st.b[i][1]);
    }
  }

  // scale from median absolute deviation of crude residuals
  {
    std::vector<double> res(md.n_obs);
    for (int i = 0; i < md.n_subjects; ++i)
      for (int o = md.offset[i]; o < md.offset[i + 1]; ++o)
        res[o] = md.y[o] - md.mu(spec, st.beta, st.b[i], o);
    std::vector<double> tmp = res;
    std::sort(tmp.begin(), tmp.end());
    double med = median_of_sorted(tmp);
    for (auto& r : tmp) r = std::abs(r - med);
    std::sort(tmp.begin(), tmp.end());
    double mad = median_of_sorted(tmp);
    st.sigma = std::max(1.4826 * mad, 1e-3) *
               std::exp(0.3 * jitter_scale * rng.normal());
  }

  if (spec.family != Family::al) {
    auto bounds = gamma_bounds(spec.p0);
    double unit0 = (0.0 - bounds.lower) / (bounds.upper - bounds.lower);
    double x = logit(unit0) + 0.2 * jitter_scale * rng.normal();
    st.gamma = bounds.lower + (bounds.upper - bounds.lower) * inv_logit(x);
  }
  if (spec.family == Family::cgal) {
    double mean = spec.priors.a_alpha / (spec.priors.a_alpha + spec.priors.b_alpha);
    double x = logit(mean) + 0.2 * jitter_scale * rng.normal();
    st.alpha = inv_logit(x);
  }

  st.omega = Eigen::MatrixXd::Identity(d, d);
  st.psi = Eigen::VectorXd::Ones(d);
  return st;
}

// ---------------------------------------------------------------------------
// The chain sampler
// ---------------------------------------------------------------------------

namespace detail {

/// Robbins-Monro adaptation of a log proposal scale toward a target
/// acceptance rate, updated per 50-iteration batch with step decay b^-0.7.
class AdaptiveScale {
 public:
  AdaptiveScale(double init_scale, double target)
      : log_scale_(std::log(init_scale)), target_(target) {}

  double scale() const { return std::exp(log_scale_); }

  void record(bool accepted, bool adapting) {
    if (!adapting) {
      post_count_ += 1;
      post_accepts_ += accepted ? 1 : 0;
      return;
    }
    batch_count_ += 1;
    batch_accepts_ += accepted ? 1 : 0;
    if (batch_count_ == 50) {
      batches_ += 1;
      double rate = batch_accepts_ / 50.0;
      log_scale_ += (rate - target_) * std::pow(batches_, -0.7);
      log_scale_ = std::clamp(log_scale_, -20.0, 10.0);
      batch_count_ = 0;
      batch_accepts_ = 0;
    }
  }

  double post_rate() const {
    return post_count_ ? static_cast<double>(post_accepts_) / post_count_ : 0.0;
  }
  long post_count() const { return post_count_; }
  long post_accepts() const { return post_accepts_; }

 private:
  double log_scale_;
  double target_;
  int batch_count_ = 0, batch_accepts_ = 0;
  long batches_ = 0;
  long post_count_ = 0, post_accepts_ = 0;
};

/// Running mean/variance used to learn a diagonal proposal preconditioner
/// during adaptation.
class VectorMoments {
 public:
  explicit VectorMoments(int dim)
      : n_(0), mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {}

  void update(const Eigen::VectorXd& x) {
    n_ += 1;
    Eigen::VectorXd delta = x - mean_;
    mean_ += delta / n_;
    m2_ += delta.cwiseProduct(x - mean_);
  }

  long count() const { return n_; }

  Eigen::VectorXd sd() const {
    Eigen::VectorXd v = m2_ / std::max<long>(n_ - 1, 1);
    Eigen::VectorXd s = v.cwiseMax(0.0).cwiseSqrt();
    double top = s.maxCoeff();
    double floor = std::max(1e-8, 1e-3 * top);
    return s.cwiseMax(floor);
  }

 private:
  long n_;
  Eigen::VectorXd mean_, m2_;
};

struct Likelihood {
  Family family;
  bool augmented;
  std::optional<AlKernel> al;
  std::optional<GalKernel> gal;
  std::optional<GalKernel> clean, wide;
  std::optional<CgalKernel> cgal;

  static Likelihood build(Family family, bool augmented, double p0, double tau0,
                          double sigma, double gamma, double alpha) {
    Likelihood lk;
    lk.family = family;
    lk.augmented = augmented;
    switch (family) {
      case Family::al:
        lk.al.emplace(sigma, p0);
        break;
      case Family::gal:
        lk.gal.emplace(sigma, gamma, p0);
        break;
      case Family::cgal:
        if (augmented) {
          lk.clean.emplace(sigma, gamma, p0);
          lk.wide.emplace(sigma * tau0, gamma, p0);
        } else {
          lk.cgal.emplace(sigma, gamma, p0, alpha, tau0);
        }
        break;
    }
    return lk;
  }

  double obs_logpdf(double r, std::uint8_t c) const {
    switch (family) {
      case Family::al: return al->logpdf(r);
      case Family::gal: return gal->logpdf(r);
      case Family::cgal:
        if (augmented) return c ? wide->logpdf(r) : clean->logpdf(r);
        return cgal->logpdf(r);
    }
    return neg_inf;
  }
};

struct ChainResult {
  Eigen::MatrixXd draws;
  Eigen::MatrixXd pointwise;
  Eigen::VectorXd inclusion_sum;
  std::vector<AcceptanceEntry> acceptance;
};

class ChainSampler {
 public:
  ChainSampler(const ModelSpec& spec, const ModelData& md, const SamplerConfig& cfg,
               const std::vector<std::string>& names, int chain_id,
               const LongitudinalDataset& data)
      : spec_(spec),
        md_(md),
        cfg_(cfg),
        names_(names),
        rng_(cfg.seed, static_cast<std::uint64_t>(chain_id)),
        scale_beta_(0.1, spec.n_fixed() > 1 ? cfg.target_accept_block
                                            : cfg.target_accept_scalar),
        moments_beta_(spec.n_fixed()),
        scale_sigma_(0.3, cfg.target_accept_scalar),
        scale_gamma_(0.3, cfg.target_accept_scalar),
        scale_alpha_(0.3, cfg.target_accept_scalar) {
    d_ = spec.random_dim;
    p_ = spec.n_fixed();
    use_augmented_ = spec.family == Family::cgal && cfg.augmented;
    st_ = initialize_state(spec, data, rng_, cfg.jitter, cfg.ordering_constraint);
    if (use_augmented_)
      st_.contamination.assign(static_cast<std::size_t>(md.n_obs), 0);
    if (spec.family != Family::al) bounds_ = gamma_bounds(spec.p0);
    precond_beta_ = Eigen::VectorXd::Ones(p_);
    for (int i = 0; i < md.n_subjects; ++i) {
      scale_b_.emplace_back(0.3, d_ > 1 ? cfg.target_accept_block
                                        : cfg.target_accept_scalar);
      moments_b_.emplace_back(d_);
      precond_b_.push_back(Eigen::VectorXd::Ones(d_));
    }
    mu_.resize(md.n_obs);
    refresh_mu_all();
    lik_ = Likelihood::build(spec.family, use_augmented_, spec.p0,
                             spec.priors.tau0, st_.sigma, st_.gamma, st_.alpha);
    cur_loglik_ = total_loglik(lik_, mu_);
  }

  ChainResult run() {
    int total = cfg_.n_adapt + cfg_.n_burnin + cfg_.n_iter;
    int retained = cfg_.n_iter / cfg_.thin;
    ChainResult res;
    res.draws.resize(retained, names_.size());
    if (cfg_.save_pointwise) res.pointwise.resize(retained, md_.n_obs);
    res.inclusion_sum = Eigen::VectorXd::Zero(md_.n_obs);
    std::vector<double> pw(md_.n_obs);

    int row = 0;
    for (int it = 0; it < total; ++it) {
      bool adapting = it < cfg_.n_adapt;
      update_beta(adapting);
      if (d_ > 0)
        for (int i = 0; i < md_.n_subjects; ++i) update_b(i, adapting);
      update_sigma(adapting);
      if (spec_.family != Family::al) update_gamma(adapting);
      if (spec_.family == Family::cgal) {
        if (use_augmented_) {
          resample_indicators();
          conjugate_alpha();
        } else {
          update_alpha(adapting);
        }
      }
      if (d_ > 0) {
        conjugate_omega();
        conjugate_psi();
      }
      if (adapting) {
        moments_beta_.update(st_.beta);
        if (d_ > 0)
          for (int i = 0; i < md_.n_subjects; ++i) moments_b_[i].update(st_.b[i]);
        if ((it + 1) % 50 == 0) refresh_preconditioners();
      }
      int k = it - cfg_.n_adapt - cfg_.n_burnin;
      if (k >= 0 && (k + 1) % cfg_.thin == 0) {
        record_row(res.draws, row);
        if (cfg_.save_pointwise) {
          pointwise_loglik(st_, spec_, md_, pw.data());
          for (int o = 0; o < md_.n_obs; ++o) res.pointwise(row, o) = pw[o];
        }
        if (spec_.family == Family::cgal) accumulate_inclusion(res.inclusion_sum);
        ++row;
      }
    }

    res.acceptance.push_back({"beta", scale_beta_.post_rate()});
    long bacc = 0, bcnt = 0;
    for (const auto& s : scale_b_) {
      bacc += s.post_accepts();
      bcnt += s.post_count();
    }
    if (bcnt > 0)
      res.acceptance.push_back({"b", static_cast<double>(bacc) / bcnt});
    res.acceptance.push_back({"sigma", scale_sigma_.post_rate()});
    if (spec_.family != Family::al)
      res.acceptance.push_back({"gamma", scale_gamma_.post_rate()});
    if (spec_.family == Family::cgal && !use_augmented_)
      res.acceptance.push_back({"alpha", scale_alpha_.post_rate()});
    return res;
  }

 private:
  void refresh_mu_all() {
    for (int i = 0; i < md_.n_subjects; ++i)
      for (int o = md_.offset[i]; o < md_.offset[i + 1]; ++o)
        mu_[o] = md_.mu(spec_, st_.beta, st_.b[i], o);
  }

  double total_loglik(const Likelihood& lk, const std::vector<double>& mu) const {
    double s = 0.0;
    for (int o = 0; o < md_.n_obs; ++o) {
      std::uint8_t c = use_augmented_ ? st_.contamination[o] : 0;
      s += lk.obs_logpdf(md_.y[o] - mu[o], c);
    }
    return s;
  }

  double subject_loglik(int i, const Eigen::VectorXd& b_i) const {
    double s = 0.0;
    for (int o = md_.offset[i]; o < md_.offset[i + 1]; ++o) {
      double mu = md_.mu(spec_, st_.beta, b_i, o);
      std::uint8_t c = use_augmented_ ? st_.contamination[o] : 0;
      s += lik_.obs_logpdf(md_.y[o] - mu, c);
    }
    return s;
  }

  double beta_logprior(const Eigen::VectorXd& beta) const {
    return -0.5 * beta.squaredNorm() / spec_.priors.s_beta_sq;
  }

  void update_beta(bool adapting) {
    Eigen::VectorXd prop = st_.beta;
    double s = scale_beta_.scale();
    for (int j = 0; j < p_; ++j) prop[j] += s * precond_beta_[j] * rng_.normal();
    bool accept = false;
    std::vector<double> mu_prop(md_.n_obs);
    for (int i = 0; i < md_.n_subjects; ++i)
      for (int o = md_.offset[i]; o < md_.offset[i + 1]; ++o)
        mu_prop[o] = md_.mu(spec_, prop, st_.b[i], o);
    double ll_prop = total_loglik(lik_, mu_prop);
    double log_ratio = ll_prop + beta_logprior(prop) -
                       (cur_loglik_ + beta_logprior(st_.beta));
    if (std::log(rng_.uniform()) < log_ratio) {
      accept = true;
      st_.beta = prop;
      mu_ = std::move(mu_prop);
      cur_loglik_ = ll_prop;
    }
    scale_beta_.record(accept, adapting);
  }

  void update_b(int i, bool adapting) {
    Eigen::VectorXd prop = st_.b[i];
    double s = scale_b_[i].scale();
    for (int k = 0; k < d_; ++k) prop[k] += s * precond_b_[i][k] * rng_.normal();
    double ll_old = subject_loglik(i, st_.b[i]);
    double ll_new = subject_loglik(i, prop);
    double lp_old = -0.5 * st_.b[i].dot(st_.omega * st_.b[i]);
    double lp_new = -0.5 * prop.dot(st_.omega * prop);
    bool accept =
        std::log(rng_.uniform()) < (ll_new + lp_new) - (ll_old + lp_old);
    if (accept) {
      cur_loglik_ += ll_new - ll_old;
      st_.b[i] = prop;
      for (int o = md_.offset[i]; o < md_.offset[i + 1]; ++o)
        mu_[o] = md_.mu(spec_, st_.beta, st_.b[i], o);
    }
    scale_b_[i].record(accept, adapting);
  }

  void update_sigma(bool adapting) {
    double x = std::log(st_.sigma);
    double xp = x + scale_sigma_.scale() * rng_.normal();
    bool accept = false;
    if (std::abs(xp) < 300.0) {
      double sigma_p = std::exp(xp);
      try {
        Likelihood lk = Likelihood::build(spec_.family, use_augmented_, spec_.p0,
                                          spec_.priors.tau0, sigma_p, st_.gamma,
                                          st_.alpha);
        double ll_prop = total_loglik(lk, mu_);
        double num = ll_prop +
                     half_t_logpdf(sigma_p, spec_.priors.s_sigma,
                                   spec_.priors.nu_sigma) +
                     xp;
        double den = cur_loglik_ +
                     half_t_logpdf(st_.sigma, spec_.priors.s_sigma,
                                   spec_.priors.nu_sigma) +
                     x;
        if (std::log(rng_.uniform()) < num - den) {
          accept = true;
          st_.sigma = sigma_p;
          lik_ = std::move(lk);
          cur_loglik_ = ll_prop;
        }
      } catch (const std::invalid_argument&) {
      }
    }
    scale_sigma_.record(accept, adapting);
  }

  void update_gamma(bool adapting) {
    double width = bounds_.upper - bounds_.lower;
    double unit = (st_.gamma - bounds_.lower) / width;
    double x = logit(unit);
    double xp = x + scale_gamma_.scale() * rng_.normal();
    bool accept = false;
    double unit_p = inv_logit(xp);
    if (unit_p > 1e-15 && unit_p < 1.0 - 1e-15) {
      double gamma_p = bounds_.lower + width * unit_p;
      try {
        Likelihood lk = Likelihood::build(spec_.family, use_augmented_, spec_.p0,
                                          spec_.priors.tau0, st_.sigma, gamma_p,
                                          st_.alpha);
        double ll_prop = total_loglik(lk, mu_);
        auto prior_on_x = [&](double u) {
          return beta_logpdf(u, spec_.priors.a_gamma, spec_.priors.b_gamma) +
                 std::log(u) + std::log1p(-u);
        };
        double num = ll_prop + prior_on_x(unit_p);
        double den = cur_loglik_ + prior_on_x(unit);
        if (std::log(rng_.uniform()) < num - den) {
          accept = true;
          st_.gamma = gamma_p;
          lik_ = std::move(lk);
          cur_loglik_ = ll_prop;
        }
      } catch (const std::invalid_argument&) {
      }
    }
    scale_gamma_.record(accept, adapting);
  }

  void update_alpha(bool adapting) {
    double x = logit(std::clamp(st_.alpha, 1e-15, 1.0 - 1e-15));
    double xp = x + scale_alpha_.scale() * rng_.normal();
    bool accept = false;
    double alpha_p = inv_logit(xp);
    if (alpha_p > 1e-15 && alpha_p < 1.0 - 1e-15) {
      try {
        Likelihood lk = Likelihood::build(spec_.family, use_augmented_, spec_.p0,
                                          spec_.priors.tau0, st_.sigma, st_.gamma,
                                          alpha_p);
        double ll_prop = total_loglik(lk, mu_);
        auto prior_on_x = [&](double a) {
          return beta_logpdf(a, spec_.priors.a_alpha, spec_.priors.b_alpha) +
                 std::log(a) + std::log1p(-a);
        };
        double num = ll_prop + prior_on_x(alpha_p);
        double den = cur_loglik_ + prior_on_x(st_.alpha);
        if (std::log(rng_.uniform()) < num - den) {
          accept = true;
          st_.alpha = alpha_p;
          lik_ = std::move(lk);
          cur_loglik_ = ll_prop;
        }
      } catch (const std::invalid_argument&) {
      }
    }
    scale_alpha_.record(accept, adapting);
  }

  void resample_indicators() {
    double la = st_.alpha > 0.0 ? std::log(st_.alpha) : neg_inf;
    double l1ma = std::log1p(-st_.alpha);
    double new_ll = 0.0;
    for (int o = 0; o < md_.n_obs; ++o) {
      double r = md_.y[o] - mu_[o];
      double f0 = lik_.clean->logpdf(r);
      double f1 = lik_.wide->logpdf(r);
      double l0 = l1ma + f0;
      double l1 = la + f1;
      double p1 = std::exp(l1 - log_sum_exp(l0, l1));
      std::uint8_t c = rng_.uniform() < p1 ? 1 : 0;
      st_.contamination[o] = c;
      new_ll += c ? f1 : f0;
    }
    cur_loglik_ = new_ll;
  }

  void conjugate_alpha() {
    double sc = 0.0;
    for (auto c : st_.contamination) sc += c;
    double n = static_cast<double>(md_.n_obs);
    double a = spec_.priors.a_alpha + sc;
    double b = spec_.priors.b_alpha + n - sc;
    st_.alpha = std::clamp(rng_.beta(a, b), 1e-15, 1.0 - 1e-15);
  }

  void conjugate_omega() {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d_, d_);
    for (const auto& bi : st_.b) s += bi * bi.transpose();
    Eigen::MatrixXd m = s;
    for (int i = 0; i < d_; ++i)
      m(i, i) += 2.0 * spec_.priors.nu_omega * st_.psi[i];
    Eigen::MatrixXd v = m.llt().solve(Eigen::MatrixXd::Identity(d_, d_));
    v = 0.5 * (v + v.transpose());
    double df = spec_.priors.nu_omega + d_ - 1.0 + md_.n_subjects;
    st_.omega = wishart_sample(df, v, rng_);
  }

  void conjugate_psi() {
    double shape = 0.5 * (spec_.priors.nu_omega + d_);
    for (int i = 0; i < d_; ++i) {
      double rate = 1.0 / (spec_.priors.a_psi * spec_.priors.a_psi) +
                    spec_.priors.nu_omega * st_.omega(i, i);
      st_.psi[i] = rng_.gamma(shape, rate);
    }
  }

  void refresh_preconditioners() {
    if (moments_beta_.count() >= 100) precond_beta_ = moments_beta_.sd();
    if (d_ == 0) return;
    for (int i = 0; i < md_.n_subjects; ++i)
      if (moments_b_[i].count() >= 100) precond_b_[i] = moments_b_[i].sd();
  }

  void record_row(Eigen::MatrixXd& draws, int row) {
    int at = 0;
    for (int j = 0; j < p_; ++j) draws(row, at++) = st_.beta[j];
    draws(row, at++) = st_.sigma;
    if (spec_.family != Family::al) draws(row, at++) = st_.gamma;
    if (spec_.family == Family::cgal) draws(row, at++) = st_.alpha;
    for (int i = 0; i < d_; ++i)
      for (int j = i; j < d_; ++j) draws(row, at++) = st_.omega(i, j);
    if (cfg_.save_random_effects)
      for (int i = 0; i < md_.n_subjects; ++i)
        for (int k = 0; k < d_; ++k) draws(row, at++) = st_.b[i][k];
  }

  void accumulate_inclusion(Eigen::VectorXd& sums) {
    // posterior inclusion probability given the current parameter state,
    // well-defined on both the augmented and marginal paths
    double la = st_.alpha > 0.0 ? std::log(st_.alpha) : neg_inf;
    double l1ma = std::log1p(-st_.alpha);
    GalKernel clean(st_.sigma, st_.gamma, spec_.p0);
    GalKernel wide(st_.sigma * spec_.priors.tau0, st_.gamma, spec_.p0);
    for (int o = 0; o < md_.n_obs; ++o) {
      double r = md_.y[o] - mu_[o];
      double l0 = l1ma + clean.logpdf(r);
      double l1 = la + wide.logpdf(r);
      sums[o] += std::exp(l1 - log_sum_exp(l0, l1));
    }
  }

  const ModelSpec& spec_;
  const ModelData& md_;
  const SamplerConfig& cfg_;
  const std::vector<std::string>& names_;
  RngStream rng_;
  ParamState st_;
  Likelihood lik_{};
  GammaBounds bounds_{0.0, 0.0};
  std::vector<double> mu_;
  double cur_loglik_ = 0.0;
  int d_ = 0, p_ = 0;
  bool use_augmented_ = false;

  AdaptiveScale scale_beta_;
  VectorMoments moments_beta_;
  Eigen::VectorXd precond_beta_;
  std::vector<AdaptiveScale> scale_b_;
  std::vector<VectorMoments> moments_b_;
  std::vector<Eigen::VectorXd> precond_b_;
  AdaptiveScale scale_sigma_, scale_gamma_, scale_alpha_;
};

}  // namespace detail

inline std::vector<std::string> tracked_names(const ModelSpec& spec,
                                              const ModelData& md,
                                              const SamplerConfig& cfg) {
  std::vector<std::string> names;
  for (int j = 0; j < spec.n_fixed(); ++j)
    names.push_back("beta" + std::to_string(j + 1));
  names.push_back("sigma");
  if (spec.family != Family::al) names.push_back("gamma");
  if (spec.family == Family::cgal) names.push_back("alpha");
  for (int i = 0; i < spec.random_dim; ++i)
    for (int j = i; j < spec.random_dim; ++j)
      names.push_back("omega" + std::to_string(i + 1) + std::to_string(j + 1));
  if (cfg.save_random_effects)
    for (int i = 0; i < md.n_subjects; ++i)
      for (int k = 0; k < spec.random_dim; ++k)
        names.push_back("b." + md.subject_ids[i] + "." + std::to_string(k + 1));
  return names;
}

/// Runs the full adaptive Metropolis-within-Gibbs sampler. Chains execute
/// concurrently on independent RNG streams; results merge by chain index, so
/// identical config yields identical output regardless of thread count.
inline PosteriorDraws run_sampler(const ModelSpec& spec,
                                  const LongitudinalDataset& data,
                                  const SamplerConfig& cfg) {
  cfg.validate();
  ModelData md(spec, data);
  PosteriorDraws out;
  out.config = cfg;
  out.n_fixed = spec.n_fixed();
  out.random_dim = spec.random_dim;
  out.n_subjects = md.n_subjects;
  out.names = tracked_names(spec, md, cfg);
  for (int i = 0; i < md.n_subjects; ++i)
    for (int o = md.offset[i]; o < md.offset[i + 1]; ++o) {
      out.obs_subject.push_back(md.subject_ids[i]);
      out.obs_time.push_back(md.t[o]);
    }

  std::vector<detail::ChainResult> results(cfg.n_chains);
  int threads = cfg.n_threads == 0
                    ? std::min(cfg.n_chains, default_thread_count())
                    : cfg.n_threads;
  parallel_for(cfg.n_chains, threads, [&](std::size_t c) {
    detail::ChainSampler cs(spec, md, cfg, out.names, static_cast<int>(c), data);
    results[c] = cs.run();
  });

  int retained = cfg.n_iter / cfg.thin;
  Eigen::VectorXd inclusion = Eigen::VectorXd::Zero(md.n_obs);
  for (int c = 0; c < cfg.n_chains; ++c) {
    out.chains.push_back(std::move(results[c].draws));
    if (cfg.save_pointwise) out.pointwise.push_back(std::move(results[c].pointwise));
    out.acceptance.push_back(std::move(results[c].acceptance));
    inclusion += results[c].inclusion_sum;
  }
  if (spec.family == Family::cgal) {
    inclusion /= static_cast<double>(cfg.n_chains) * retained;
    out.inclusion_prob.assign(inclusion.data(), inclusion.data() + md.n_obs);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

struct TrajectoryRow {
  double time, median, hpd_lo, hpd_hi;
};

inline const std::vector<double>& default_prediction_schedule() {
  static const std::vector<double> s{0, 2, 7, 10, 14, 21, 28, 56, 84, 168, 336};
  return s;
}

/// Population-level quantile trajectory (random effects at zero) over a time
/// schedule, with cd4 imputed linearly as intercept + slope*t.
inline std::vector<TrajectoryRow> predict_quantile_trajectory(
    const PosteriorDraws& draws, const ModelSpec& spec,
    const std::vector<double>& schedule = default_prediction_schedule(),
    std::pair<double, double> cd4_model = {2.25, 0.001}) {
  if (!spec.is_biphasic())
    throw std::invalid_argument(
        "predict_quantile_trajectory: biphasic link required");
  const auto& bp = std::get<BiphasicLink>(spec.link);
  Eigen::MatrixXd all = draws.stacked();
  int n = static_cast<int>(all.rows());
  if (n == 0) throw std::invalid_argument("predict_quantile_trajectory: no draws");
  std::vector<int> beta_cols(spec.n_fixed());
  for (int j = 0; j < spec.n_fixed(); ++j)
    beta_cols[j] = draws.col("beta" + std::to_string(j + 1));

  std::vector<TrajectoryRow> rows;
  std::vector<double> mu(n);
  for (double t : schedule) {
    double cd4 = cd4_model.first + cd4_model.second * t;
    for (int k = 0; k < n; ++k) {
      if (spec.reduced_biphasic()) {
        double a1 = all(k, beta_cols[0]) - all(k, beta_cols[1]) * t;
        double a2 = bp.beta3_fixed - bp.beta4_fixed * t;
        mu[k] = log_sum_exp(a1, a2) / ln_10;
      } else {
        double a1 = all(k, beta_cols[0]) - all(k, beta_cols[1]) * t;
        double a2 = all(k, beta_cols[2]) -
                    (all(k, beta_cols[3]) + all(k, beta_cols[4]) * cd4) * t;
        mu[k] = log_sum_exp(a1, a2) / ln_10;
      }
    }
    std::sort(mu.begin(), mu.end());
    auto [lo, hi] = hpd_interval(mu, 0.95);
    rows.push_back({t, median_of_sorted(mu), lo, hi});
  }
  return rows;
}

}  // namespace galqr
