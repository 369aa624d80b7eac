// galqr command line: fit quantile mixed models, predict trajectories, run
// diagnostics and the simulation study, and emit density/kurtosis tables.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "galqr/galqr.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace galqr;

namespace {

struct RunContext {
  std::string verb;
  IniFile config;       // resolved: file + flag overrides (output key removed)
  fs::path outdir;
  std::uint64_t seed = 0;
  std::vector<fs::path> outputs;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  fs::path out(const std::string& name) {
    fs::path p = outdir / name;
    outputs.push_back(p);
    return p;
  }

  void remove_partial_outputs() {
    for (const auto& p : outputs) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
};

struct CommonFlags {
  std::string config_path, manifest_path, output_dir, input_path;
  std::string family, link;
  double p0 = -1.0, cd4_scale = -1.0;
  long chains = -1, iterations = -1, replicates = -1, sims = -1, threads = -1;
  std::optional<std::uint64_t> seed;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f, bool with_input) {
  cmd->add_option("--config", f.config_path, "configuration file");
  cmd->add_option("--manifest", f.manifest_path,
                  "re-run from a previous run's manifest.json");
  cmd->add_option("--output", f.output_dir,
                  "output directory (default: $GALQR_OUTPUT_ROOT or .)");
  cmd->add_option("--seed", f.seed, "master RNG seed");
  cmd->add_option("--threads", f.threads, "worker thread count (0 = auto)");
  if (with_input) {
    cmd->add_option("--input", f.input_path, "input CSV (id,time,y[,covariates])");
    cmd->add_option("--cd4-scale", f.cd4_scale,
                    "divide the cd4 covariate by this factor on ingest");
  }
}

IniFile resolve_config(const std::string& verb, const CommonFlags& f,
                       std::string* output_from_config) {
  IniFile ini;
  if (!f.manifest_path.empty()) {
    std::ifstream in(f.manifest_path);
    if (!in) throw std::runtime_error("cannot read manifest: " + f.manifest_path);
    json m = json::parse(in);
    if (m.value("verb", "") != verb)
      throw std::runtime_error("manifest verb '" + m.value("verb", "") +
                               "' does not match command '" + verb + "'");
    ini = IniFile::parse_string(m.at("resolved_config").get<std::string>());
  } else if (!f.config_path.empty()) {
    ini = IniFile::parse_file(f.config_path);
  }

  if (!f.input_path.empty()) ini.set("", "input", f.input_path);
  if (f.cd4_scale > 0) ini.set("", "cd4_scale", format_double(f.cd4_scale));
  if (f.sims > 0) ini.set("", "sims", std::to_string(f.sims));
  if (f.seed) ini.set("", "seed", std::to_string(*f.seed));
  if (!f.family.empty()) ini.set("model", "family", f.family);
  if (f.p0 >= 0) ini.set("model", "p0", format_double(f.p0));
  if (f.chains > 0) ini.set("sampler", "chains", std::to_string(f.chains));
  if (f.iterations > 0)
    ini.set("sampler", "iterations", std::to_string(f.iterations));
  if (f.threads >= 0) ini.set("sampler", "threads", std::to_string(f.threads));
  if (f.replicates > 0)
    ini.set("scenario", "replicates", std::to_string(f.replicates));

  *output_from_config = ini.get("", "output");
  ini.erase("", "output");  // destination is per-invocation, not run semantics
  ini.check_sections({"", "model", "sampler", "scenario", "table"});
  ini.check_section("", io_section_keys());
  return ini;
}

RunContext make_context(const std::string& verb, const CommonFlags& f) {
  RunContext ctx;
  ctx.verb = verb;
  std::string cfg_output;
  ctx.config = resolve_config(verb, f, &cfg_output);
  ctx.seed = ctx.config.get_u64("", "seed", 0);

  std::string outdir = f.output_dir;
  if (outdir.empty()) outdir = cfg_output;
  if (outdir.empty()) {
    const char* env = std::getenv("GALQR_OUTPUT_ROOT");
    outdir = env && *env ? env : ".";
  }
  ctx.outdir = outdir;
  fs::create_directories(ctx.outdir);
  return ctx;
}

void write_manifest(RunContext& ctx) {
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              ctx.t0)
                    .count();
  std::string cfg_text = ctx.config.serialize();
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(fnv1a_hash(cfg_text)));
  json m;
  m["schema_version"] = schema_version;
  m["verb"] = ctx.verb;
  m["seed"] = ctx.seed;
  m["config_hash"] = hash;
  m["versions"] = {{"galqr", version_string}};
  m["wall_time_sec"] = secs;
  json outs = json::array();
  for (const auto& p : ctx.outputs) outs.push_back(p.filename().string());
  m["outputs"] = outs;
  m["resolved_config"] = cfg_text;
  std::ofstream out(ctx.outdir / "manifest.json");
  out << m.dump(2) << '\n';
}

LongitudinalDataset load_input(const RunContext& ctx) {
  std::string input = ctx.config.get("", "input");
  if (input.empty())
    throw std::runtime_error("no input CSV given (--input or config key)");
  if (!fs::exists(input))
    throw std::runtime_error("input file does not exist: " + input);
  std::map<std::string, double> scales;
  if (ctx.config.has("", "cd4_scale"))
    scales["cd4"] = ctx.config.get_double("", "cd4_scale", 1.0);
  return ingest_csv(input, scales);
}

void write_summary_csv(const fs::path& path, const std::vector<SummaryRow>& rows) {
  CsvWriter w(path.string());
  w.write_row({"name", "median", "hpd_lo", "hpd_hi", "rhat", "ess"});
  for (const auto& r : rows)
    w.write_row({r.name, format_double(r.median), format_double(r.hpd_lo),
                 format_double(r.hpd_hi), format_double(r.rhat),
                 format_double(r.ess)});
  w.close();
}

void write_draws_csv(const fs::path& path, const PosteriorDraws& draws) {
  CsvWriter w(path.string());
  std::vector<std::string> header{"chain", "iteration"};
  header.insert(header.end(), draws.names.begin(), draws.names.end());
  w.write_row(header);
  for (std::size_t c = 0; c < draws.chains.size(); ++c) {
    const Eigen::MatrixXd& m = draws.chains[c];
    for (int r = 0; r < m.rows(); ++r) {
      std::vector<std::string> row{std::to_string(c + 1), std::to_string(r + 1)};
      for (int j = 0; j < m.cols(); ++j) row.push_back(format_double(m(r, j)));
      w.write_row(row);
    }
  }
  w.close();
}

void write_convergence_json(const fs::path& path, const PosteriorDraws& draws,
                            const ConvergenceReport& rep) {
  json j;
  j["schema_version"] = schema_version;
  j["max_rhat"] = rep.max_rhat;
  j["converged"] = rep.converged;
  json acc = json::array();
  for (std::size_t c = 0; c < draws.acceptance.size(); ++c)
    for (const auto& a : draws.acceptance[c])
      acc.push_back({{"chain", c + 1}, {"block", a.block}, {"rate", a.rate}});
  j["acceptance"] = acc;
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

PosteriorDraws fit_from_context(const RunContext& ctx, ModelSpec* spec_out,
                                bool force_pointwise = false,
                                LongitudinalDataset* data_out = nullptr) {
  LongitudinalDataset data = load_input(ctx);
  ModelSpec spec = model_spec_from_config(ctx.config);
  SamplerConfig cfg = sampler_config_from_config(ctx.config);
  cfg.seed = ctx.seed;
  if (force_pointwise) {
    cfg.save_pointwise = true;
    cfg.save_random_effects = true;
  }
  *spec_out = spec;
  if (data_out) *data_out = data;
  return run_sampler(spec, data, cfg);
}

// --------------------------------------------------------------------------
// Verbs
// --------------------------------------------------------------------------

void cmd_fit(RunContext& ctx) {
  ModelSpec spec;
  PosteriorDraws draws = fit_from_context(ctx, &spec);
  ConvergenceReport rep = convergence_report(draws);
  write_draws_csv(ctx.out("draws.csv"), draws);
  write_summary_csv(ctx.out("summary.csv"), rep.rows);
  write_convergence_json(ctx.out("convergence.json"), draws, rep);
  if (spec.family == Family::cgal) {
    CsvWriter w(ctx.out("inclusion.csv").string());
    w.write_row({"subject", "time", "inclusion_prob"});
    for (std::size_t o = 0; o < draws.inclusion_prob.size(); ++o)
      w.write_row({draws.obs_subject[o], format_double(draws.obs_time[o]),
                   format_double(draws.inclusion_prob[o])});
    w.close();
  }
}

void cmd_predict(RunContext& ctx) {
  ModelSpec spec;
  PosteriorDraws draws = fit_from_context(ctx, &spec);
  auto rows = predict_quantile_trajectory(draws, spec);
  CsvWriter w(ctx.out("prediction.csv").string());
  w.write_row({"time", "median", "hpd_lo", "hpd_hi"});
  for (const auto& r : rows)
    w.write_row({format_double(r.time), format_double(r.median),
                 format_double(r.hpd_lo), format_double(r.hpd_hi)});
  w.close();
}

void cmd_diagnose(RunContext& ctx) {
  ModelSpec spec;
  LongitudinalDataset data;
  PosteriorDraws draws = fit_from_context(ctx, &spec, true, &data);
  ModelData md(spec, data);

  Eigen::MatrixXd pointwise(
      static_cast<long>(draws.pointwise.size()) * draws.retained_per_chain(),
      md.n_obs);
  long at = 0;
  for (const auto& m : draws.pointwise) {
    pointwise.middleRows(at, m.rows()) = m;
    at += m.rows();
  }

  auto influence = influence_table(pointwise, draws.obs_subject, draws.obs_time);
  {
    CsvWriter w(ctx.out("influence.csv").string());
    w.write_row({"subject", "time", "obs_index", "kl", "calibration",
                 "influential"});
    for (const auto& rec : influence)
      w.write_row({rec.subject, format_double(rec.time),
                   std::to_string(rec.obs_index),
                   format_double(std::min(rec.kl, 10.0)),  // export cap
                   format_double(rec.calibration),
                   rec.influential ? "true" : "false"});
    w.close();
  }

  LooReport loo = psis_loo(pointwise);
  {
    json j;
    j["schema_version"] = schema_version;
    j["elpd"] = loo.elpd;
    j["looic"] = loo.looic;
    j["high_khat_count"] = loo.high_khat_count;
    std::ofstream out(ctx.out("loo.json"));
    out << j.dump(2) << '\n';
  }
  {
    CsvWriter w(ctx.out("loo.csv").string());
    w.write_row({"obs_index", "subject", "time", "elpd_i", "khat"});
    for (int o = 0; o < md.n_obs; ++o)
      w.write_row({std::to_string(o), draws.obs_subject[o],
                   format_double(draws.obs_time[o]),
                   format_double(loo.elpd_i[o]), format_double(loo.khat[o])});
    w.close();
  }

  int sims = static_cast<int>(ctx.config.get_int("", "sims", 500));
  RngStream diag_rng(ctx.seed, 0xD1A6);
  Eigen::MatrixXd preds = posterior_predictive(draws, spec, md, sims, diag_rng);
  ResidualReport res = residual_report(preds, md.y, diag_rng);
  {
    CsvWriter w(ctx.out("residuals.csv").string());
    w.write_row({"obs_index", "subject", "time", "residual"});
    for (int o = 0; o < md.n_obs; ++o)
      w.write_row({std::to_string(o), draws.obs_subject[o],
                   format_double(draws.obs_time[o]),
                   format_double(res.residuals[o])});
    w.close();
  }
  {
    json j;
    j["schema_version"] = schema_version;
    j["ks_statistic"] = res.ks.statistic;
    j["p_uniform"] = res.p_uniform;
    j["p_dispersion"] = res.p_dispersion;
    j["p_outlier"] = res.p_outlier;
    j["simulations"] = sims;
    std::ofstream out(ctx.out("residual_tests.json"));
    out << j.dump(2) << '\n';
  }
}

void cmd_simulate(RunContext& ctx) {
  SamplerConfig cfg = sampler_config_from_config(ctx.config);
  int n_threads = cfg.n_threads;
  std::vector<ScenarioSpec> scenarios;
  if (ctx.config.has_section("scenario")) {
    scenarios.push_back(scenario_from_config(ctx.config));
  } else {
    scenarios = default_scenario_grid();
  }
  std::vector<ScenarioResult> results;
  for (const auto& s : scenarios)
    results.push_back(run_scenario(s, cfg, ctx.seed, n_threads));
  write_contamination_table(results, ctx.out("contamination.csv").string());
  write_performance_table(results, ctx.out("perform.csv").string());

  json j;
  j["schema_version"] = schema_version;
  json runs = json::array();
  for (const auto& res : results)
    for (const auto& fr : res.families)
      runs.push_back({{"p0", res.scenario.p0},
                      {"alpha", res.scenario.alpha_true},
                      {"family", family_name(fr.family)},
                      {"replicates_used", fr.n_used},
                      {"fit_failures", fr.n_failed},
                      {"rhat_flagged", fr.n_flagged}});
  j["runs"] = runs;
  std::ofstream out(ctx.out("run_summary.json"));
  out << j.dump(2) << '\n';
}

void cmd_pdf_table(RunContext& ctx) {
  ctx.config.check_section("table", table_section_keys());
  double p0 = ctx.config.get_double("table", "p0", 0.5);
  double gamma = ctx.config.get_double("table", "gamma", -0.3);
  double sigma = ctx.config.get_double("table", "sigma", 1.0);
  double alpha = ctx.config.get_double("table", "alpha", 0.1);
  double tau0 = ctx.config.get_double("table", "tau0", 10.0);
  double y_min = ctx.config.get_double("table", "y_min", -15.0 * sigma);
  double y_max = ctx.config.get_double("table", "y_max", 15.0 * sigma);
  int points = static_cast<int>(ctx.config.get_int("table", "points", 801));
  if (points < 2 || !(y_max > y_min))
    throw std::runtime_error("pdf-table: invalid grid");

  GalParams gal{0.0, sigma, gamma, p0};
  CgalParams cgal{0.0, sigma, gamma, p0, alpha, tau0};
  gal.validate();
  cgal.validate();
  GalCdf gal_cdf_f(gal);

  std::vector<double> ys(points);
  for (int i = 0; i < points; ++i)
    ys[i] = y_min + (y_max - y_min) * i / (points - 1);
  std::vector<double> gal_cdf_v = gal_cdf_f.grid(ys);

  CsvWriter w(ctx.out("pdf_table.csv").string());
  w.write_row({"y", "al_pdf", "gal_pdf", "cgal_pdf", "al_cdf", "gal_cdf",
               "cgal_cdf"});
  for (int i = 0; i < points; ++i) {
    double y = ys[i];
    w.write_row({format_double(y),
                 format_double(std::exp(al_logpdf(y, {0.0, sigma, p0}))),
                 format_double(gal_pdf(y, gal)), format_double(cgal_pdf(y, cgal)),
                 format_double(al_cdf(y, {0.0, sigma, p0})),
                 format_double(gal_cdf_v[i]), format_double(cgal_cdf(y, cgal))});
  }
  w.close();
}

void cmd_kurtosis_table(RunContext& ctx) {
  ctx.config.check_section("table", table_section_keys());
  double p0 = ctx.config.get_double("table", "p0", 0.5);
  double sigma = ctx.config.get_double("table", "sigma", 1.0);
  double alpha = ctx.config.get_double("table", "alpha", 0.1);
  double tau0 = ctx.config.get_double("table", "tau0", 10.0);
  int samples = static_cast<int>(ctx.config.get_int("table", "samples", 200000));
  int grid_points =
      static_cast<int>(ctx.config.get_int("table", "grid_points", 41));
  if (samples < 100 || grid_points < 3)
    throw std::runtime_error("kurtosis-table: invalid grid");

  GammaBounds bounds = gamma_bounds(p0);
  CsvWriter w(ctx.out("kurtosis_table.csv").string());
  w.write_row({"gamma", "family", "skewness", "kurtosis", "phi_left",
               "phi_right"});
  std::vector<double> draws(samples);
  for (int k = 0; k < grid_points; ++k) {
    double frac = (k + 0.5) / grid_points;
    double gamma = bounds.lower + (bounds.upper - bounds.lower) * frac;
    for (int fam = 0; fam < 2; ++fam) {
      RngStream rng(ctx.seed, static_cast<std::uint64_t>(k) * 2 + fam);
      if (fam == 0) {
        GalParams par{0.0, sigma, gamma, p0};
        for (auto& d : draws) d = gal_sample(par, rng);
      } else {
        CgalParams par{0.0, sigma, gamma, p0, alpha, tau0};
        for (auto& d : draws) d = cgal_sample(par, rng);
      }
      auto [skew, kurt] = sample_skewness_kurtosis(draws);
      auto [pl, pr] = lstat_kurtosis(draws);
      w.write_row({format_double(gamma), fam == 0 ? "GAL" : "cGAL",
                   format_double(skew), format_double(kurt), format_double(pl),
                   format_double(pr)});
    }
  }
  w.close();
}

int run_verb(const std::string& verb, const CommonFlags& flags,
             void (*body)(RunContext&)) {
  RunContext ctx;
  try {
    ctx = make_context(verb, flags);
    body(ctx);
    write_manifest(ctx);
    return 0;
  } catch (const std::exception& e) {
    ctx.remove_partial_outputs();
    json err{{"error", {{"verb", verb}, {"message", e.what()}}}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian quantile mixed models with contaminated generalized "
               "Laplace likelihoods"};
  app.require_subcommand(1);

  CommonFlags f_fit, f_pred, f_diag, f_sim, f_pdf, f_kurt;

  CLI::App* c_fit = app.add_subcommand("fit", "sample the posterior and write "
                                              "draws, summary, and convergence");
  add_common_flags(c_fit, f_fit, true);
  c_fit->add_option("--family", f_fit.family, "AL, GAL, or cGAL");
  c_fit->add_option("--p0", f_fit.p0, "target quantile level");
  c_fit->add_option("--chains", f_fit.chains, "number of chains");
  c_fit->add_option("--iterations", f_fit.iterations, "post-burnin iterations");

  CLI::App* c_pred = app.add_subcommand(
      "predict", "fit, then write the population quantile trajectory");
  add_common_flags(c_pred, f_pred, true);
  c_pred->add_option("--family", f_pred.family, "AL, GAL, or cGAL");
  c_pred->add_option("--p0", f_pred.p0, "target quantile level");
  c_pred->add_option("--chains", f_pred.chains, "number of chains");
  c_pred->add_option("--iterations", f_pred.iterations, "post-burnin iterations");

  CLI::App* c_diag = app.add_subcommand(
      "diagnose", "fit, then write influence, LOO, and residual reports");
  add_common_flags(c_diag, f_diag, true);
  c_diag->add_option("--family", f_diag.family, "AL, GAL, or cGAL");
  c_diag->add_option("--p0", f_diag.p0, "target quantile level");
  c_diag->add_option("--chains", f_diag.chains, "number of chains");
  c_diag->add_option("--iterations", f_diag.iterations,
                     "post-burnin iterations");
  c_diag->add_option("--sims", f_diag.sims,
                     "posterior predictive replicates (default 500)");

  CLI::App* c_sim = app.add_subcommand(
      "simulate", "run the four-scenario robustness study (or one configured "
                  "scenario) and write performance tables");
  add_common_flags(c_sim, f_sim, false);
  c_sim->add_option("--replicates", f_sim.replicates,
                    "datasets per scenario (default 50)");

  CLI::App* c_pdf = app.add_subcommand(
      "pdf-table", "write density and CDF grids for the configured kernel");
  add_common_flags(c_pdf, f_pdf, false);

  CLI::App* c_kurt = app.add_subcommand(
      "kurtosis-table",
      "write sampled skewness/kurtosis curves over the admissible shape grid");
  add_common_flags(c_kurt, f_kurt, false);

  CLI11_PARSE(app, argc, argv);

  if (c_fit->parsed()) return run_verb("fit", f_fit, cmd_fit);
  if (c_pred->parsed()) return run_verb("predict", f_pred, cmd_predict);
  if (c_diag->parsed()) return run_verb("diagnose", f_diag, cmd_diagnose);
  if (c_sim->parsed()) return run_verb("simulate", f_sim, cmd_simulate);
  if (c_pdf->parsed()) return run_verb("pdf-table", f_pdf, cmd_pdf_table);
  if (c_kurt->parsed()) return run_verb("kurtosis-table", f_kurt, cmd_kurtosis_table);
  return 1;
}
