#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "galqr/dataset.hpp"
#include "galqr/distributions.hpp"
#include "galqr/math.hpp"

namespace galqr {

enum class Family { al, gal, cgal };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::al: return "AL";
    case Family::gal: return "GAL";
    case Family::cgal: return "cGAL";
  }
  throw std::logic_error("family_name: bad enum");
}

inline Family family_from_string(const std::string& s) {
  if (s == "al" || s == "AL") return Family::al;
  if (s == "gal" || s == "GAL") return Family::gal;
  if (s == "cgal" || s == "cGAL" || s == "CGAL") return Family::cgal;
  throw std::invalid_argument("unknown family '" + s + "' (expected al|gal|cgal)");
}

struct PriorConfig {
  double s_beta_sq = 1000.0;  // fixed-effect prior variance
  double s_sigma = std::sqrt(10.0);
  double nu_sigma = 3.0;      // truncated-t df for sigma
  double a_gamma = 1.0;       // Beta prior on the shape's unit-interval auxiliary
  double b_gamma = 1.0;
  double a_psi = 50.0;        // half-t scale hyperparameter for random-effect SDs
  double nu_omega = 2.0;      // Wishart hierarchy df parameter
  double a_alpha = 1.0;       // Beta prior on contamination weight
  double b_alpha = 9.0;
  double tau0 = 10.0;         // fixed contamination scale inflation

  static PriorConfig baseline() { return {}; }

  /// Wider preset: half-Cauchy on sigma, Jeffreys Beta(1/2,1/2) on the shape
  /// auxiliary and on alpha.
  static PriorConfig sensitivity() {
    PriorConfig p;
    p.s_sigma = 100.0;
    p.nu_sigma = 1.0;
    p.a_gamma = p.b_gamma = 0.5;
    p.a_alpha = p.b_alpha = 0.5;
    return p;
  }

  void validate() const {
    auto pos = [](double v, const char* n) {
      if (!(v > 0.0))
        throw std::invalid_argument(std::string("PriorConfig: ") + n +
                                    " must be positive");
    };
    pos(s_beta_sq, "s_beta_sq");
    pos(s_sigma, "s_sigma");
    pos(nu_sigma, "nu_sigma");
    pos(a_gamma, "a_gamma");
    pos(b_gamma, "b_gamma");
    pos(a_psi, "a_psi");
    pos(nu_omega, "nu_omega");
    pos(a_alpha, "a_alpha");
    pos(b_alpha, "b_alpha");
    if (!(tau0 >= 1.0)) throw std::invalid_argument("PriorConfig: tau0 must be >= 1");
  }
};

/// Linear link: design column tokens are "intercept", "time", or a covariate
/// name. Random effects use the first random_dim design columns.
struct LinearLink {
  std::vector<std::string> columns;
};

/// Biphasic decay link. With random_dim 4 (full model) all five fixed effects
/// are sampled and the second decay rate carries a cd4 slope; with random_dim 2
/// (two-parameter variant) the second phase is frozen at the values below.
struct BiphasicLink {
  double beta3_fixed = 3.5;
  double beta4_fixed = 0.05;
};

using LinkSpec = std::variant<LinearLink, BiphasicLink>;

struct ModelSpec {
  Family family = Family::cgal;
  double p0 = 0.5;
  LinkSpec link = BiphasicLink{};
  int random_dim = 4;
  PriorConfig priors;

  bool is_biphasic() const { return std::holds_alternative<BiphasicLink>(link); }
  bool reduced_biphasic() const { return is_biphasic() && random_dim == 2; }

  int n_fixed() const {
    if (is_biphasic()) return reduced_biphasic() ? 2 : 5;
    return static_cast<int>(std::get<LinearLink>(link).columns.size());
  }

  void validate(const LongitudinalDataset& data) const {
    if (!(p0 > 0.0 && p0 < 1.0))
      throw std::invalid_argument("ModelSpec: p0 must lie in (0,1)");
    priors.validate();
    data.validate();
    if (is_biphasic()) {
      if (random_dim != 2 && random_dim != 4)
        throw std::invalid_argument(
            "ModelSpec: biphasic link needs random_dim 2 or 4");
      if (random_dim == 4 && !data.has_covariate("cd4"))
        throw std::invalid_argument(
            "ModelSpec: full biphasic model needs a cd4 covariate");
    } else {
      const auto& cols = std::get<LinearLink>(link).columns;
      if (cols.empty())
        throw std::invalid_argument("ModelSpec: linear link needs design columns");
      if (random_dim < 0 || random_dim > static_cast<int>(cols.size()))
        throw std::invalid_argument(
            "ModelSpec: random_dim must lie in [0, n design columns]");
      for (const auto& c : cols) {
        if (c == "intercept" || c == "time") continue;
        if (!data.has_covariate(c))
          throw std::invalid_argument("ModelSpec: dataset lacks covariate '" + c +
                                      "'");
      }
    }
  }
};

struct ParamState {
  Eigen::VectorXd beta;
  double sigma = 1.0;
  double gamma = 0.0;  // unused for AL
  double alpha = 0.0;  // cGAL only
  Eigen::MatrixXd omega;  // random-effect precision, d x d
  Eigen::VectorXd psi;    // Wishart-hierarchy auxiliaries, length d
  std::vector<Eigen::VectorXd> b;          // one vector per subject
  std::vector<std::uint8_t> contamination;  // per obs; empty = marginal likelihood
};

/// log10(P1 e^{-lambda1 t} + P2 e^{-lambda2 t}) with
/// log P1 = beta1+b1, lambda1 = beta2+b2, log P2 = beta3+b3,
/// lambda2 = beta4 + beta5*cd4 + b4; evaluated as a log-sum-exp so neither
/// phase can overflow.
inline double biphasic_mu(const Eigen::VectorXd& beta, const Eigen::VectorXd& b,
                          double t, double cd4) {
  if (beta.size() != 5 || b.size() != 4)
    throw std::invalid_argument("biphasic_mu: needs 5 fixed and 4 random effects");
  double a1 = beta[0] + b[0] - (beta[1] + b[1]) * t;
  double a2 = beta[2] + b[2] - (beta[3] + beta[4] * cd4 + b[3]) * t;
  return log_sum_exp(a1, a2) / ln_10;
}

inline double linear_mu(const Eigen::VectorXd& beta, const Eigen::VectorXd& b,
                        const Eigen::VectorXd& x) {
  if (x.size() != beta.size())
    throw std::invalid_argument("linear_mu: design/beta dimension mismatch");
  if (b.size() > beta.size())
    throw std::invalid_argument("linear_mu: more random effects than columns");
  double v = beta.dot(x);
  for (int k = 0; k < b.size(); ++k) v += b[k] * x[k];
  return v;
}

/// Flattened observation arrays bound to a (spec, dataset) pair; built once and
/// shared read-only by the sampler and diagnostics.
struct ModelData {
  int n_subjects = 0;
  int n_obs = 0;
  std::vector<int> offset;  // size n_subjects+1, obs index ranges per subject
  std::vector<double> y, t, cd4;
  std::vector<std::string> subject_ids;
  Eigen::MatrixXd design;  // linear link only, n_obs x n_fixed

  ModelData(const ModelSpec& spec, const LongitudinalDataset& data) {
    spec.validate(data);
    n_subjects = data.n_subjects();
    n_obs = data.n_obs();
    offset.assign(n_subjects + 1, 0);
    y.reserve(n_obs);
    t.reserve(n_obs);
    bool need_cd4 = spec.is_biphasic() && spec.random_dim == 4;
    if (need_cd4) cd4.reserve(n_obs);
    const LinearLink* lin =
        spec.is_biphasic() ? nullptr : &std::get<LinearLink>(spec.link);
    if (lin) design.resize(n_obs, spec.n_fixed());
    int row = 0;
    for (int i = 0; i < n_subjects; ++i) {
      const auto& subj = data.subjects[i];
      subject_ids.push_back(subj.id);
      offset[i] = row;
      for (const auto& obs : subj.obs) {
        y.push_back(obs.y);
        t.push_back(obs.time);
        if (need_cd4) cd4.push_back(obs.covariate("cd4"));
        if (lin) {
          for (std::size_t c = 0; c < lin->columns.size(); ++c) {
            const std::string& tok = lin->columns[c];
            double v = tok == "intercept" ? 1.0
                       : tok == "time"    ? obs.time
                                          : obs.covariate(tok);
            design(row, static_cast<int>(c)) = v;
          }
        }
        ++row;
      }
      offset[i + 1] = row;
    }
  }

  int subject_of(int obs_idx) const {
    int lo = 0, hi = n_subjects;
    while (hi - lo > 1) {
      int mid = (lo + hi) / 2;
      if (offset[mid] <= obs_idx) lo = mid;
      else hi = mid;
    }
    return lo;
  }

  double mu(const ModelSpec& spec, const Eigen::VectorXd& beta,
            const Eigen::VectorXd& b_i, int o) const {
    if (spec.is_biphasic()) {
      const auto& bp = std::get<BiphasicLink>(spec.link);
      if (spec.reduced_biphasic()) {
        double a1 = beta[0] + b_i[0] - (beta[1] + b_i[1]) * t[o];
        double a2 = bp.beta3_fixed - bp.beta4_fixed * t[o];
        return log_sum_exp(a1, a2) / ln_10;
      }
      double a1 = beta[0] + b_i[0] - (beta[1] + b_i[1]) * t[o];
      double a2 = beta[2] + b_i[2] - (beta[3] + beta[4] * cd4[o] + b_i[3]) * t[o];
      return log_sum_exp(a1, a2) / ln_10;
    }
    double v = design.row(o).dot(beta);
    for (int k = 0; k < b_i.size(); ++k) v += b_i[k] * design(o, k);
    return v;
  }
};

namespace detail {

inline void check_state(const ParamState& state, const ModelSpec& spec,
                        const ModelData& md) {
  if (state.beta.size() != spec.n_fixed())
    throw std::invalid_argument("state: beta dimension mismatch");
  if (!(state.sigma > 0.0)) throw std::invalid_argument("state: sigma must be > 0");
  if (static_cast<int>(state.b.size()) != md.n_subjects)
    throw std::invalid_argument("state: random-effect count mismatch");
  for (const auto& bi : state.b)
    if (bi.size() != spec.random_dim)
      throw std::invalid_argument("state: random-effect dimension mismatch");
  if (!state.contamination.empty()) {
    if (spec.family != Family::cgal)
      throw std::invalid_argument("state: indicators only valid under cGAL");
    if (static_cast<int>(state.contamination.size()) != md.n_obs)
      throw std::invalid_argument("state: indicator count mismatch");
  }
  if (spec.family == Family::cgal && !(state.alpha >= 0.0 && state.alpha < 1.0))
    throw std::invalid_argument("state: alpha outside [0,1)");
}

}  // namespace detail

/// Sum of observation log-densities at the linked locations. For cGAL with
/// instantiated indicators this is the conditional likelihood given the
/// indicators (single GAL component, scale sigma*tau0^c); with empty
/// indicators the contamination is marginalized.
inline double loglik(const ParamState& state, const ModelSpec& spec,
                     const ModelData& md) {
  detail::check_state(state, spec, md);
  double total = 0.0;
  switch (spec.family) {
    case Family::al: {
      AlKernel k(state.sigma, spec.p0);
      for (int i = 0; i < md.n_subjects; ++i)
        for (int o = md.offset[i]; o < md.offset[i + 1]; ++o)
          total += k.logpdf(md.y[o] - md.mu(spec, state.beta, state.b[i], o));
      return total;
    }
    case Family::gal: {
      GalKernel k(state.sigma, state.gamma, spec.p0);
      for (int i = 0; i < md.n_subjects; ++i)
        for (int o = md.offset[i]; o < md.offset[i + 1]; ++o)
          total += k.logpdf(md.y[o] - md.mu(spec, state.beta, state.b[i], o));
      return total;
    }
    case Family::cgal: {
      CgalKernel k(state.sigma, state.gamma, spec.p0, state.alpha,
                   spec.priors.tau0);
      bool augmented = !state.contamination.empty();
      for (int i = 0; i < md.n_subjects; ++i)
        for (int o = md.offset[i]; o < md.offset[i + 1]; ++o) {
          double r = md.y[o] - md.mu(spec, state.beta, state.b[i], o);
          total += augmented ? k.logpdf_component(r, state.contamination[o])
                             : k.logpdf(r);
        }
      return total;
    }
  }
  throw std::logic_error("loglik: bad family enum");
}

inline double loglik(const ParamState& state, const ModelSpec& spec,
                     const LongitudinalDataset& data) {
  return loglik(state, spec, ModelData(spec, data));
}

/// Per-observation marginal log densities (contamination summed out for cGAL),
/// the pointwise quantities used by LOO and K-L influence.
inline void pointwise_loglik(const ParamState& state, const ModelSpec& spec,
                             const ModelData& md, double* out) {
  detail::check_state(state, spec, md);
  std::optional<AlKernel> al;
  std::optional<GalKernel> gal;
  std::optional<CgalKernel> cgal;
  switch (spec.family) {
    case Family::al: al.emplace(state.sigma, spec.p0); break;
    case Family::gal: gal.emplace(state.sigma, state.gamma, spec.p0); break;
    case Family::cgal:
      cgal.emplace(state.sigma, state.gamma, spec.p0, state.alpha,
                   spec.priors.tau0);
      break;
  }
  for (int i = 0; i < md.n_subjects; ++i)
    for (int o = md.offset[i]; o < md.offset[i + 1]; ++o) {
      double r = md.y[o] - md.mu(spec, state.beta, state.b[i], o);
      switch (spec.family) {
        case Family::al: out[o] = al->logpdf(r); break;
        case Family::gal: out[o] = gal->logpdf(r); break;
        case Family::cgal: out[o] = cgal->logpdf(r); break;
      }
    }
}

/// log density of a truncated-t prior t+(0, scale, df) evaluated at x > 0.
inline double half_t_logpdf(double x, double scale, double df) {
  if (!(x > 0.0)) return neg_inf;
  return std::log(2.0) + std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
         0.5 * std::log(df * pi * scale * scale) -
         0.5 * (df + 1.0) * std::log1p(x * x / (df * scale * scale));
}

inline double beta_logpdf(double x, double a, double b) {
  if (!(x > 0.0 && x < 1.0)) return neg_inf;
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta(a, b);
}

inline double gamma_logpdf_rate(double x, double shape, double rate) {
  if (!(x > 0.0)) return neg_inf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
         rate * x;
}

/// Wishart(df, V) log density at SPD X (V = scale matrix).
inline double wishart_logpdf(const Eigen::MatrixXd& x, double df,
                             const Eigen::MatrixXd& v) {
  int d = static_cast<int>(x.rows());
  Eigen::LLT<Eigen::MatrixXd> llt_x(x), llt_v(v);
  if (llt_x.info() != Eigen::Success || llt_v.info() != Eigen::Success)
    return neg_inf;
  double logdet_x = 0.0, logdet_v = 0.0;
  for (int i = 0; i < d; ++i) {
    logdet_x += 2.0 * std::log(llt_x.matrixL()(i, i));
    logdet_v += 2.0 * std::log(llt_v.matrixL()(i, i));
  }
  double tr = llt_v.solve(x).trace();
  return 0.5 * (df - d - 1.0) * logdet_x - 0.5 * tr - 0.5 * df * d * std::log(2.0) -
         0.5 * df * logdet_v - log_mvgamma(d, 0.5 * df);
}

/// Joint log prior over (beta, sigma, shape auxiliary, alpha, Omega, psi, b).
/// The contamination indicators' Bernoulli mass is not included here; the
/// sampler handles it implicitly through the conjugate alpha update.
inline double logprior(const ParamState& state, const ModelSpec& spec) {
  const PriorConfig& pr = spec.priors;
  int d = spec.random_dim;
  double lp = 0.0;

  for (int j = 0; j < state.beta.size(); ++j)
    lp += -0.5 * std::log(2.0 * pi * pr.s_beta_sq) -
          0.5 * state.beta[j] * state.beta[j] / pr.s_beta_sq;

  lp += half_t_logpdf(state.sigma, pr.s_sigma, pr.nu_sigma);

  if (spec.family != Family::al) {
    auto bounds = gamma_bounds(spec.p0);
    double width = bounds.upper - bounds.lower;
    double unit = (state.gamma - bounds.lower) / width;
    lp += beta_logpdf(unit, pr.a_gamma, pr.b_gamma) - std::log(width);
  }

  if (spec.family == Family::cgal)
    lp += beta_logpdf(state.alpha, pr.a_alpha, pr.b_alpha);

  if (d > 0) {
    if (state.omega.rows() != d || state.omega.cols() != d ||
        state.psi.size() != d)
      throw std::invalid_argument("logprior: Omega/psi dimension mismatch");
    double df = pr.nu_omega + d - 1.0;
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i) {
      if (!(state.psi[i] > 0.0)) return neg_inf;
      v(i, i) = 1.0 / (2.0 * pr.nu_omega * state.psi[i]);
    }
    double wish = wishart_logpdf(state.omega, df, v);
    if (wish == neg_inf) return neg_inf;
    lp += wish;
    for (int i = 0; i < d; ++i)
      lp += gamma_logpdf_rate(state.psi[i], 0.5, 1.0 / (pr.a_psi * pr.a_psi));

    Eigen::LLT<Eigen::MatrixXd> llt(state.omega);
    if (llt.info() != Eigen::Success) return neg_inf;
    double logdet_omega = 0.0;
    for (int i = 0; i < d; ++i) logdet_omega += 2.0 * std::log(llt.matrixL()(i, i));
    for (const auto& bi : state.b) {
      double quad = bi.dot(state.omega * bi);
      lp += -0.5 * d * log_2pi + 0.5 * logdet_omega - 0.5 * quad;
    }
  }
  return lp;
}

}  // namespace galqr
