#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "galqr/mcmc.hpp"
#include "galqr/model.hpp"
#include "galqr/sim.hpp"

namespace galqr {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Key/value configuration with [section] headers, one `key = value` per
/// line, and # or ; comments. Later duplicates win. Keys outside a section
/// land in the unnamed section "".
class IniFile {
 public:
  static IniFile parse_string(const std::string& text) {
    IniFile ini;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']')
          throw std::runtime_error("config line " + std::to_string(lineno) +
                                   ": unterminated section header");
        section = detail::trim(t.substr(1, t.size() - 2));
        ini.data_[section];
        continue;
      }
      std::size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": expected key = value");
      std::string key = detail::trim(t.substr(0, eq));
      std::string value = detail::trim(t.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": empty key");
      ini.data_[section][key] = value;
    }
    return ini;
  }

  static IniFile parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
  }

  bool has(const std::string& section, const std::string& key) const {
    auto s = data_.find(section);
    return s != data_.end() && s->second.count(key) > 0;
  }

  bool has_section(const std::string& section) const {
    return data_.count(section) > 0;
  }

  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback = "") const {
    auto s = data_.find(section);
    if (s == data_.end()) return fallback;
    auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
  }

  std::string require(const std::string& section, const std::string& key) const {
    if (!has(section, key))
      throw std::runtime_error("config: missing required key [" + section + "] " +
                               key);
    return get(section, key);
  }

  double get_double(const std::string& section, const std::string& key,
                    double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get(section, key);
    try {
      std::size_t pos = 0;
      double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw std::runtime_error("config: [" + section + "] " + key +
                               " is not a number: '" + v + "'");
    }
  }

  long get_int(const std::string& section, const std::string& key,
               long fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get(section, key);
    try {
      std::size_t pos = 0;
      long n = std::stol(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw std::runtime_error("config: [" + section + "] " + key +
                               " is not an integer: '" + v + "'");
    }
  }

  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get(section, key);
    try {
      std::size_t pos = 0;
      std::uint64_t n = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw std::runtime_error("config: [" + section + "] " + key +
                               " is not an unsigned integer: '" + v + "'");
    }
  }

  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const {
    if (!has(section, key)) return fallback;
    std::string v = get(section, key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("config: [" + section + "] " + key +
                             " is not a boolean: '" + v + "'");
  }

  std::vector<std::string> get_list(const std::string& section,
                                    const std::string& key) const {
    std::vector<std::string> out;
    std::string v = get(section, key);
    std::string cur;
    for (char c : v) {
      if (c == ',') {
        std::string t = detail::trim(cur);
        if (!t.empty()) out.push_back(t);
        cur.clear();
      } else {
        cur += c;
      }
    }
    std::string t = detail::trim(cur);
    if (!t.empty()) out.push_back(t);
    return out;
  }

  void set(const std::string& section, const std::string& key,
           const std::string& value) {
    data_[section][key] = value;
  }

  void erase(const std::string& section, const std::string& key) {
    auto s = data_.find(section);
    if (s != data_.end()) s->second.erase(key);
  }

  /// Rejects keys in `section` outside the allowed roster.
  void check_section(const std::string& section,
                     const std::set<std::string>& allowed) const {
    auto s = data_.find(section);
    if (s == data_.end()) return;
    for (const auto& [key, value] : s->second)
      if (!allowed.count(key))
        throw std::runtime_error("config: unknown key [" + section + "] " + key);
  }

  void check_sections(const std::set<std::string>& allowed) const {
    for (const auto& [section, kv] : data_)
      if (!allowed.count(section))
        throw std::runtime_error("config: unknown section [" + section + "]");
  }

  /// Canonical text: sections and keys in sorted order, `key = value` lines.
  std::string serialize() const {
    std::ostringstream out;
    for (const auto& [section, kv] : data_) {
      if (kv.empty() && section.empty()) continue;
      if (!section.empty()) out << '[' << section << "]\n";
      for (const auto& [key, value] : kv) out << key << " = " << value << '\n';
    }
    return out.str();
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> data_;
};

inline std::uint64_t fnv1a_hash(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Section rosters and builders
// ---------------------------------------------------------------------------

inline const std::set<std::string>& model_section_keys() {
  static const std::set<std::string> keys{
      "family",     "p0",       "link",     "columns",  "random_dim",
      "beta3_fixed", "beta4_fixed", "priors", "s_beta_sq", "s_sigma",
      "nu_sigma",   "a_gamma",  "b_gamma",  "a_psi",    "nu_omega",
      "a_alpha",    "b_alpha",  "tau0"};
  return keys;
}

inline const std::set<std::string>& sampler_section_keys() {
  static const std::set<std::string> keys{
      "chains",        "adapt",     "burnin",
      "iterations",    "thin",      "target_accept_scalar",
      "target_accept_block", "ordering_constraint", "augmented",
      "save_random_effects", "save_pointwise", "jitter",
      "threads"};
  return keys;
}

inline const std::set<std::string>& scenario_section_keys() {
  static const std::set<std::string> keys{
      "p0",    "alpha", "subjects", "times",    "replicates", "families",
      "beta1", "beta2", "beta3",    "beta4",    "sigma",      "gamma",
      "tau0",  "sigma_b11", "sigma_b12", "sigma_b22"};
  return keys;
}

inline const std::set<std::string>& table_section_keys() {
  static const std::set<std::string> keys{"p0",    "gamma",  "sigma",
                                          "alpha", "tau0",   "y_min",
                                          "y_max", "points", "samples",
                                          "grid_points"};
  return keys;
}

inline const std::set<std::string>& io_section_keys() {
  static const std::set<std::string> keys{"input", "output", "seed", "cd4_scale",
                                          "sims"};
  return keys;
}

inline ModelSpec model_spec_from_config(const IniFile& ini) {
  ini.check_section("model", model_section_keys());
  ModelSpec spec;
  try {
    spec.family = family_from_string(ini.get("model", "family", "cgal"));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("config: [model] family: ") + e.what());
  }
  spec.p0 = ini.get_double("model", "p0", 0.5);

  std::string link = ini.get("model", "link", "biphasic");
  if (link == "biphasic") {
    spec.link = BiphasicLink{};
    spec.random_dim = static_cast<int>(ini.get_int("model", "random_dim", 4));
  } else if (link == "biphasic-reduced") {
    BiphasicLink bp;
    bp.beta3_fixed = ini.get_double("model", "beta3_fixed", bp.beta3_fixed);
    bp.beta4_fixed = ini.get_double("model", "beta4_fixed", bp.beta4_fixed);
    spec.link = bp;
    spec.random_dim = static_cast<int>(ini.get_int("model", "random_dim", 2));
  } else if (link == "linear") {
    LinearLink lin;
    lin.columns = ini.get_list("model", "columns");
    if (lin.columns.empty())
      throw std::runtime_error("config: [model] columns required for linear link");
    spec.link = lin;
    spec.random_dim = static_cast<int>(ini.get_int("model", "random_dim", 1));
  } else {
    throw std::runtime_error("config: unknown link '" + link + "'");
  }

  std::string priors = ini.get("model", "priors", "baseline");
  if (priors == "baseline") spec.priors = PriorConfig::baseline();
  else if (priors == "sensitivity") spec.priors = PriorConfig::sensitivity();
  else throw std::runtime_error("config: unknown priors preset '" + priors + "'");

  spec.priors.s_beta_sq = ini.get_double("model", "s_beta_sq", spec.priors.s_beta_sq);
  spec.priors.s_sigma = ini.get_double("model", "s_sigma", spec.priors.s_sigma);
  spec.priors.nu_sigma = ini.get_double("model", "nu_sigma", spec.priors.nu_sigma);
  spec.priors.a_gamma = ini.get_double("model", "a_gamma", spec.priors.a_gamma);
  spec.priors.b_gamma = ini.get_double("model", "b_gamma", spec.priors.b_gamma);
  spec.priors.a_psi = ini.get_double("model", "a_psi", spec.priors.a_psi);
  spec.priors.nu_omega = ini.get_double("model", "nu_omega", spec.priors.nu_omega);
  spec.priors.a_alpha = ini.get_double("model", "a_alpha", spec.priors.a_alpha);
  spec.priors.b_alpha = ini.get_double("model", "b_alpha", spec.priors.b_alpha);
  spec.priors.tau0 = ini.get_double("model", "tau0", spec.priors.tau0);
  spec.priors.validate();
  return spec;
}

inline SamplerConfig sampler_config_from_config(const IniFile& ini) {
  ini.check_section("sampler", sampler_section_keys());
  SamplerConfig cfg;
  cfg.n_chains = static_cast<int>(ini.get_int("sampler", "chains", cfg.n_chains));
  cfg.n_adapt = static_cast<int>(ini.get_int("sampler", "adapt", cfg.n_adapt));
  cfg.n_burnin = static_cast<int>(ini.get_int("sampler", "burnin", cfg.n_burnin));
  cfg.n_iter =
      static_cast<int>(ini.get_int("sampler", "iterations", cfg.n_iter));
  cfg.thin = static_cast<int>(ini.get_int("sampler", "thin", cfg.thin));
  cfg.target_accept_scalar = ini.get_double("sampler", "target_accept_scalar",
                                            cfg.target_accept_scalar);
  cfg.target_accept_block =
      ini.get_double("sampler", "target_accept_block", cfg.target_accept_block);
  cfg.ordering_constraint =
      ini.get_bool("sampler", "ordering_constraint", cfg.ordering_constraint);
  cfg.augmented = ini.get_bool("sampler", "augmented", cfg.augmented);
  cfg.save_random_effects =
      ini.get_bool("sampler", "save_random_effects", cfg.save_random_effects);
  cfg.save_pointwise =
      ini.get_bool("sampler", "save_pointwise", cfg.save_pointwise);
  cfg.jitter = ini.get_double("sampler", "jitter", cfg.jitter);
  cfg.n_threads = static_cast<int>(ini.get_int("sampler", "threads", cfg.n_threads));
  cfg.validate();
  return cfg;
}

inline ScenarioSpec scenario_from_config(const IniFile& ini) {
  ini.check_section("scenario", scenario_section_keys());
  ScenarioSpec s;
  s.p0 = ini.get_double("scenario", "p0", s.p0);
  s.alpha_true = ini.get_double("scenario", "alpha", s.alpha_true);
  s.n_subjects = static_cast<int>(ini.get_int("scenario", "subjects", s.n_subjects));
  s.n_times = static_cast<int>(ini.get_int("scenario", "times", s.n_times));
  s.replicates =
      static_cast<int>(ini.get_int("scenario", "replicates", s.replicates));
  if (ini.has("scenario", "families")) {
    s.families.clear();
    for (const auto& f : ini.get_list("scenario", "families"))
      s.families.push_back(family_from_string(f));
  }
  s.truth.beta[0] = ini.get_double("scenario", "beta1", s.truth.beta[0]);
  s.truth.beta[1] = ini.get_double("scenario", "beta2", s.truth.beta[1]);
  s.truth.beta[2] = ini.get_double("scenario", "beta3", s.truth.beta[2]);
  s.truth.beta[3] = ini.get_double("scenario", "beta4", s.truth.beta[3]);
  s.truth.sigma = ini.get_double("scenario", "sigma", s.truth.sigma);
  s.truth.gamma = ini.get_double("scenario", "gamma", s.truth.gamma);
  s.truth.tau0 = ini.get_double("scenario", "tau0", s.truth.tau0);
  s.truth.sigma_b(0, 0) =
      ini.get_double("scenario", "sigma_b11", s.truth.sigma_b(0, 0));
  s.truth.sigma_b(0, 1) =
      ini.get_double("scenario", "sigma_b12", s.truth.sigma_b(0, 1));
  s.truth.sigma_b(1, 0) = s.truth.sigma_b(0, 1);
  s.truth.sigma_b(1, 1) =
      ini.get_double("scenario", "sigma_b22", s.truth.sigma_b(1, 1));
  s.validate();
  return s;
}

}  // namespace galqr
