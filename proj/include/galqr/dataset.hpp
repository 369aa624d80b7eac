#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace galqr {

struct Observation {
  double time = 0.0;
  double y = 0.0;
  std::map<std::string, double> covariates;

  double covariate(const std::string& name) const {
    auto it = covariates.find(name);
    if (it == covariates.end())
      throw std::invalid_argument("observation lacks covariate '" + name + "'");
    return it->second;
  }
};

struct Subject {
  std::string id;
  std::vector<Observation> obs;
};

struct LongitudinalDataset {
  std::vector<Subject> subjects;

  int n_subjects() const { return static_cast<int>(subjects.size()); }

  int n_obs() const {
    int n = 0;
    for (const auto& s : subjects) n += static_cast<int>(s.obs.size());
    return n;
  }

  bool has_covariate(const std::string& name) const {
    for (const auto& s : subjects)
      for (const auto& o : s.obs)
        if (!o.covariates.count(name)) return false;
    return !subjects.empty();
  }

  void validate() const {
    if (subjects.empty())
      throw std::invalid_argument("dataset: needs at least one subject");
    for (const auto& s : subjects) {
      if (s.obs.empty())
        throw std::invalid_argument("dataset: subject '" + s.id +
                                    "' has no observations");
      for (const auto& o : s.obs) {
        if (!(o.time >= 0.0))
          throw std::invalid_argument("dataset: negative time in subject '" + s.id +
                                      "'");
        if (!std::isfinite(o.y))
          throw std::invalid_argument("dataset: non-finite response in subject '" +
                                      s.id + "'");
      }
    }
  }

  /// Canonical order: subjects sorted by id (numeric when every id parses as a
  /// number, else lexicographic), observations sorted by time within subject.
  void canonicalize() {
    bool all_numeric = true;
    std::vector<double> keys(subjects.size());
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      try {
        std::size_t pos = 0;
        keys[i] = std::stod(subjects[i].id, &pos);
        if (pos != subjects[i].id.size()) all_numeric = false;
      } catch (...) {
        all_numeric = false;
      }
    }
    std::vector<std::size_t> order(subjects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (all_numeric) return keys[a] < keys[b];
      return subjects[a].id < subjects[b].id;
    });
    std::vector<Subject> sorted;
    sorted.reserve(subjects.size());
    for (auto i : order) sorted.push_back(std::move(subjects[i]));
    subjects = std::move(sorted);
    for (auto& s : subjects)
      std::stable_sort(s.obs.begin(), s.obs.end(),
                       [](const Observation& a, const Observation& b) {
                         return a.time < b.time;
                       });
  }
};

}  // namespace galqr
