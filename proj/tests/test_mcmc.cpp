#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "galqr/mcmc.hpp"
#include "galqr/sim.hpp"

using namespace galqr;

namespace {

LongitudinalDataset al_noise_data(double mu, double sigma, double p0, int n,
                                  std::uint64_t seed) {
  RngStream rng(seed, 0);
  LongitudinalDataset d;
  Subject s{"1", {}};
  for (int i = 0; i < n; ++i)
    s.obs.push_back({static_cast<double>(i), al_sample({mu, sigma, p0}, rng), {}});
  d.subjects.push_back(s);
  return d;
}

LongitudinalDataset grouped_linear_data(int n_subjects, int n_times,
                                        std::uint64_t seed, Family noise,
                                        double contamination = 0.0) {
  RngStream rng(seed, 0);
  LongitudinalDataset d;
  for (int i = 0; i < n_subjects; ++i) {
    Subject s{std::to_string(i + 1), {}};
    double b = rng.normal(0.0, 0.5);
    for (int j = 0; j < n_times; ++j) {
      double t = j;
      double eps = noise == Family::al
                       ? al_sample({0.0, 0.3, 0.5}, rng)
                       : cgal_sample({0.0, 0.3, -0.3, 0.5, contamination, 10.0},
                                     rng);
      s.obs.push_back({t, 2.0 + 0.5 * t + b + eps, {}});
    }
    d.subjects.push_back(s);
  }
  return d;
}

ModelSpec linear_spec(Family fam, double p0 = 0.5, int random_dim = 1) {
  ModelSpec spec;
  spec.family = fam;
  spec.p0 = p0;
  spec.link = LinearLink{{"intercept", "time"}};
  spec.random_dim = random_dim;
  return spec;
}

bool same_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.array() == b.array()).all();
}

SamplerConfig quick_cfg(std::uint64_t seed, int chains = 2) {
  SamplerConfig cfg;
  cfg.n_chains = chains;
  cfg.n_adapt = 400;
  cfg.n_burnin = 300;
  cfg.n_iter = 800;
  cfg.thin = 4;
  cfg.seed = seed;
  cfg.n_threads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("split_rhat limits") {
  std::vector<Eigen::VectorXd> constant(3, Eigen::VectorXd::Constant(100, 2.5));
  CHECK(split_rhat(constant) == Catch::Approx(1.0).margin(1e-12));

  RngStream rng(1, 0);
  std::vector<Eigen::VectorXd> same(2, Eigen::VectorXd(10000));
  for (auto& c : same)
    for (int i = 0; i < c.size(); ++i) c[i] = rng.normal();
  CHECK(split_rhat(same) < 1.01);

  std::vector<Eigen::VectorXd> split(2, Eigen::VectorXd(1000));
  for (int i = 0; i < 1000; ++i) {
    split[0][i] = rng.normal();
    split[1][i] = 10.0 + rng.normal();
  }
  CHECK(split_rhat(split) > 3.0);

  std::vector<Eigen::VectorXd> tiny(1, Eigen::VectorXd(100));
  CHECK_THROWS_AS(split_rhat(tiny), std::invalid_argument);
}

TEST_CASE("effective sample size tracks autocorrelation") {
  RngStream rng(2, 0);
  int n = 20000;
  std::vector<Eigen::VectorXd> iid(2, Eigen::VectorXd(n));
  for (auto& c : iid)
    for (int i = 0; i < n; ++i) c[i] = rng.normal();
  double e_iid = ess(iid);
  CHECK(e_iid > 0.7 * 2 * n);
  CHECK(e_iid <= 2.0 * n + 1e-9);

  // AR(1) with rho = 0.9: asymptotic efficiency (1-rho)/(1+rho) ~ 1/19
  double rho = 0.9, sd = std::sqrt(1.0 - rho * rho);
  std::vector<Eigen::VectorXd> ar(2, Eigen::VectorXd(n));
  for (auto& c : ar) {
    double x = rng.normal();
    for (int i = 0; i < n; ++i) {
      x = rho * x + sd * rng.normal();
      c[i] = x;
    }
  }
  double e_ar = ess(ar);
  double expected = 2 * n * (1.0 - rho) / (1.0 + rho);
  CHECK(e_ar > 0.5 * expected);
  CHECK(e_ar < 2.0 * expected);
}

TEST_CASE("hpd_interval on canonical inputs") {
  std::vector<double> grid(100);
  for (int i = 0; i < 100; ++i) grid[i] = i + 1.0;
  auto [lo, hi] = hpd_interval(grid, 0.95);
  CHECK(lo == 1.0);
  CHECK(hi == 95.0);

  RngStream rng(3, 0);
  std::vector<double> z(1000000);
  for (auto& v : z) v = rng.normal();
  std::sort(z.begin(), z.end());
  auto [nlo, nhi] = hpd_interval(z, 0.95);
  CHECK(nlo == Catch::Approx(-1.96).margin(0.02));
  CHECK(nhi == Catch::Approx(1.96).margin(0.02));

  std::vector<double> point(50, 7.0);
  auto [plo, phi] = hpd_interval(point, 0.95);
  CHECK(plo == 7.0);
  CHECK(phi == 7.0);

  std::vector<double> few(10, 1.0);
  CHECK_THROWS_AS(hpd_interval(few, 0.95), std::invalid_argument);
}

TEST_CASE("wishart and mvn samplers match their moments") {
  RngStream rng(4, 0);
  Eigen::MatrixXd v(2, 2);
  v << 0.5, 0.1, 0.1, 0.3;
  double df = 7.0;
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(2, 2);
  int n = 20000;
  for (int i = 0; i < n; ++i) mean += wishart_sample(df, v, rng);
  mean /= n;
  Eigen::MatrixXd expect = df * v;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      CHECK(mean(r, c) == Catch::Approx(expect(r, c)).margin(0.05));

  Eigen::MatrixXd cov(2, 2);
  cov << 1.0, 0.6, 0.6, 2.0;
  Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(2, 2);
  Eigen::VectorXd msum = Eigen::VectorXd::Zero(2);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x = mvn_sample_chol(chol, rng);
    msum += x;
    acc += x * x.transpose();
  }
  Eigen::VectorXd m = msum / n;
  Eigen::MatrixXd c2 = acc / n - m * m.transpose();
  CHECK(m.norm() < 0.05);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      CHECK(c2(r, c) == Catch::Approx(cov(r, c)).margin(0.08));
}

TEST_CASE("conjugate wishart posterior recovers a known precision") {
  // b_i ~ MVN(0, S): the update's posterior mean must approach S^{-1}
  RngStream rng(5, 0);
  Eigen::MatrixXd s(2, 2);
  s << 0.9025, 0.045125, 0.045125, 0.9025;
  Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(s).matrixL();
  int n_sub = 2000;
  Eigen::MatrixXd bbt = Eigen::MatrixXd::Zero(2, 2);
  for (int i = 0; i < n_sub; ++i) {
    Eigen::VectorXd b = mvn_sample_chol(chol, rng);
    bbt += b * b.transpose();
  }
  double nu = 2.0;
  Eigen::VectorXd psi = Eigen::VectorXd::Ones(2);
  Eigen::MatrixXd prior_scale = Eigen::MatrixXd::Zero(2, 2);
  for (int i = 0; i < 2; ++i) prior_scale(i, i) = 2.0 * nu * psi[i];
  double df = nu + 2 - 1 + n_sub;
  Eigen::MatrixXd vpost = (prior_scale + bbt).inverse();

  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(2, 2);
  int draws = 4000;
  for (int k = 0; k < draws; ++k) mean += wishart_sample(df, vpost, rng);
  mean /= draws;

  Eigen::MatrixXd closed = df * vpost;
  Eigen::MatrixXd target = s.inverse();
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      CHECK(mean(r, c) == Catch::Approx(closed(r, c)).margin(0.03));
      CHECK(mean(r, c) == Catch::Approx(target(r, c)).margin(0.08));
    }
}

TEST_CASE("initialize_state is least squares for the linear link") {
  auto data = grouped_linear_data(8, 6, 11, Family::al);
  ModelSpec spec = linear_spec(Family::al);
  RngStream rng(6, 0);
  ParamState st = initialize_state(spec, data, rng, 0.0);

  ModelData md(spec, data);
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(md.y.data(), md.n_obs);
  Eigen::VectorXd ols = md.design.colPivHouseholderQr().solve(y);
  CHECK(st.beta[0] == Catch::Approx(ols[0]).margin(1e-12));
  CHECK(st.beta[1] == Catch::Approx(ols[1]).margin(1e-12));
  CHECK(st.sigma > 0.0);
}

TEST_CASE("initialize_state enforces the decay ordering") {
  ScenarioSpec scen;
  RngStream data_rng(21, 0);
  auto data = generate_dataset(scen, data_rng);
  ModelSpec spec;
  spec.family = Family::gal;
  spec.link = BiphasicLink{scen.truth.beta[2], scen.truth.beta[3]};
  spec.random_dim = 2;

  for (std::uint64_t stream = 0; stream < 20; ++stream) {
    RngStream rng(99, stream);
    ParamState st = initialize_state(spec, data, rng, 1.0);
    for (const auto& bi : st.b)
      CHECK(st.beta[1] + bi[1] > scen.truth.beta[3]);
  }

  // streams give overdispersed starts
  RngStream r1(99, 1), r2(99, 2);
  ParamState a = initialize_state(spec, data, r1, 1.0);
  ParamState b = initialize_state(spec, data, r2, 1.0);
  CHECK((a.beta - b.beta).norm() > 0.0);
}

TEST_CASE("posterior median of sigma is near the grid likelihood peak") {
  double p0 = 0.5, sigma_true = 0.3;
  auto data = al_noise_data(0.0, sigma_true, p0, 200, 31);
  ModelSpec spec;
  spec.family = Family::al;
  spec.p0 = p0;
  spec.link = LinearLink{{"intercept"}};
  spec.random_dim = 0;

  PosteriorDraws draws = run_sampler(spec, data, quick_cfg(17));
  auto rows = posterior_summary(draws);
  double med_sigma = 0.0;
  for (const auto& r : rows)
    if (r.name == "sigma") med_sigma = r.median;

  // 1-d likelihood grid at the sample-quantile location estimate
  std::vector<double> ys;
  for (const auto& s : data.subjects)
    for (const auto& o : s.obs) ys.push_back(o.y);
  std::sort(ys.begin(), ys.end());
  double mu_hat = ys[static_cast<std::size_t>(p0 * ys.size())];
  double best_sigma = 0.0, best_ll = neg_inf;
  for (int k = 0; k < 4000; ++k) {
    double sg = 0.05 + k * 0.0005;
    double ll = 0.0;
    for (double y : ys) ll += al_logpdf(y, {mu_hat, sg, p0});
    if (ll > best_ll) {
      best_ll = ll;
      best_sigma = sg;
    }
  }
  CHECK(med_sigma == Catch::Approx(best_sigma).epsilon(0.15));
}

TEST_CASE("seed determinism across thread counts") {
  auto data = grouped_linear_data(6, 5, 41, Family::al);
  ModelSpec spec = linear_spec(Family::al);
  SamplerConfig cfg = quick_cfg(23);

  PosteriorDraws a = run_sampler(spec, data, cfg);
  PosteriorDraws b = run_sampler(spec, data, cfg);
  SamplerConfig cfg2 = cfg;
  cfg2.n_threads = 2;
  PosteriorDraws c = run_sampler(spec, data, cfg2);

  REQUIRE(a.chains.size() == b.chains.size());
  for (std::size_t k = 0; k < a.chains.size(); ++k) {
    CHECK(same_matrix(a.chains[k], b.chains[k]));
    CHECK(same_matrix(a.chains[k], c.chains[k]));
  }

  SamplerConfig other = cfg;
  other.seed += 1;
  PosteriorDraws d = run_sampler(spec, data, other);
  CHECK(!same_matrix(a.chains[0], d.chains[0]));
}

TEST_CASE("augmented and marginal cGAL paths agree") {
  auto data = grouped_linear_data(10, 8, 51, Family::cgal, 0.1);
  ModelSpec spec = linear_spec(Family::cgal);

  SamplerConfig aug = quick_cfg(29);
  aug.n_iter = 2000;
  aug.n_adapt = 600;
  SamplerConfig marg = aug;
  marg.augmented = false;

  PosteriorDraws da = run_sampler(spec, data, aug);
  PosteriorDraws dm = run_sampler(spec, data, marg);

  auto median_of = [](const PosteriorDraws& d, const std::string& name) {
    Eigen::VectorXd col = d.stacked().col(d.col(name));
    std::vector<double> v(col.data(), col.data() + col.size());
    std::sort(v.begin(), v.end());
    return median_of_sorted(v);
  };
  for (const std::string& par : {"beta1", "beta2", "sigma", "alpha"}) {
    double ma = median_of(da, par), mm = median_of(dm, par);
    INFO(par << ": augmented " << ma << " marginal " << mm);
    CHECK(ma == Catch::Approx(mm).margin(par == "alpha" ? 0.06 : 0.12));
  }

  // both paths estimate inclusion probabilities for every observation
  ModelData md(spec, data);
  REQUIRE(static_cast<int>(da.inclusion_prob.size()) == md.n_obs);
  REQUIRE(static_cast<int>(dm.inclusion_prob.size()) == md.n_obs);
  for (int o = 0; o < md.n_obs; ++o) {
    CHECK(da.inclusion_prob[o] >= 0.0);
    CHECK(da.inclusion_prob[o] <= 1.0);
  }
}

TEST_CASE("acceptance rates stay in the working band") {
  auto data = grouped_linear_data(8, 7, 61, Family::gal);
  ModelSpec spec = linear_spec(Family::gal);
  SamplerConfig cfg = quick_cfg(37);
  cfg.n_adapt = 1500;  // enough Robbins-Monro batches to settle

  PosteriorDraws draws = run_sampler(spec, data, cfg);
  for (const auto& chain : draws.acceptance)
    for (const auto& entry : chain) {
      INFO(entry.block << " rate " << entry.rate);
      CHECK(entry.rate > 0.1);
      CHECK(entry.rate < 0.6);
    }
}

TEST_CASE("posterior_summary roster and constants") {
  auto data = grouped_linear_data(5, 6, 71, Family::cgal, 0.1);
  ModelSpec spec = linear_spec(Family::cgal);
  SamplerConfig cfg = quick_cfg(43);
  PosteriorDraws draws = run_sampler(spec, data, cfg);

  std::vector<std::string> expect{"beta1", "beta2", "sigma",
                                  "gamma", "alpha", "omega11"};
  for (const auto& name : expect) CHECK(draws.has(name));
  CHECK(draws.has("b.1.1"));

  auto rows = posterior_summary(draws);
  for (const auto& r : rows) {
    CHECK(r.name.rfind("b.", 0) != 0);  // random effects skipped
    CHECK(std::isfinite(r.median));
    CHECK(r.hpd_lo <= r.median);
    CHECK(r.median <= r.hpd_hi);
  }

  // constant column: inject and summarize
  PosteriorDraws fake = draws;
  for (auto& c : fake.chains) c.col(0).setConstant(3.25);
  auto frows = posterior_summary(fake);
  CHECK(frows[0].median == 3.25);
  CHECK(frows[0].hpd_lo == 3.25);
  CHECK(frows[0].hpd_hi == 3.25);

  auto rep = convergence_report(draws);
  CHECK(rep.max_rhat >= 1.0);
  CHECK(rep.rows.size() == rows.size());
}

TEST_CASE("prediction trajectory contract") {
  ScenarioSpec scen;
  RngStream data_rng(81, 0);
  auto data = generate_dataset(scen, data_rng);
  ModelSpec spec;
  spec.family = Family::gal;
  spec.link = BiphasicLink{scen.truth.beta[2], scen.truth.beta[3]};
  spec.random_dim = 2;

  SamplerConfig cfg = quick_cfg(47);
  PosteriorDraws draws = run_sampler(spec, data, cfg);

  auto sched = default_prediction_schedule();
  CHECK(sched == std::vector<double>{0, 2, 7, 10, 14, 21, 28, 56, 84, 168, 336});

  auto rows = predict_quantile_trajectory(draws, spec);
  REQUIRE(rows.size() == sched.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].time == sched[i]);
    CHECK(rows[i].hpd_lo <= rows[i].median);
    CHECK(rows[i].median <= rows[i].hpd_hi);
  }
  // early viral load starts near log10(exp(b1)+exp(b3)) and decays
  CHECK(rows[0].median > rows[3].median);

  // without a cd4 slope in the model the covariate model is irrelevant
  auto alt = predict_quantile_trajectory(draws, spec, sched, {99.0, -3.0});
  for (std::size_t i = 0; i < rows.size(); ++i)
    CHECK(rows[i].median == alt[i].median);

  ModelSpec lin = linear_spec(Family::al);
  CHECK_THROWS_AS(predict_quantile_trajectory(draws, lin),
                  std::invalid_argument);
}

TEST_CASE("sampler config validation") {
  SamplerConfig cfg;
  cfg.n_iter = 999;
  cfg.thin = 10;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.n_chains = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.target_accept_scalar = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
