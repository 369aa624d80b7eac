#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "galqr/dataset.hpp"

namespace galqr {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

/// Character-level CSV parse; quoted fields may contain commas, doubled
/// quotes, and newlines. CR is dropped outside quotes so CRLF files work.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open CSV file: " + path);
  CsvTable table;
  bool have_header = false;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  auto end_row = [&]() {
    row.push_back(field);
    field.clear();
    if (!have_header) {
      table.header = row;
      have_header = true;
    } else if (!(row.size() == 1 && row[0].empty())) {  // skip blank lines
      table.rows.push_back(row);
    }
    row.clear();
  };
  char c;
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get(c);
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(field);
      field.clear();
    } else if (c == '\n') {
      end_row();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (!field.empty() || !row.empty()) end_row();
  if (!have_header) throw std::runtime_error("empty CSV file: " + path);
  return table;
}

inline double parse_number(const std::string& s, const std::string& path, int line,
                           const std::string& column) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
    if (pos != s.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (...) {
    throw std::runtime_error(path + ":" + std::to_string(line) +
                             ": non-numeric value '" + s + "' in column '" + column +
                             "'");
  }
}

/// Reads a longitudinal dataset from CSV with required columns id,time,y.
/// Any additional columns become named per-observation covariates; a covariate
/// listed in scale_covariates is divided by its scale factor on ingest.
inline LongitudinalDataset ingest_csv(
    const std::string& path,
    const std::map<std::string, double>& scale_covariates = {}) {
  CsvTable table = read_csv(path);
  int id_col = table.column("id");
  int t_col = table.column("time");
  int y_col = table.column("y");
  if (id_col < 0) throw std::runtime_error(path + ": missing required column 'id'");
  if (t_col < 0) throw std::runtime_error(path + ": missing required column 'time'");
  if (y_col < 0) throw std::runtime_error(path + ": missing required column 'y'");

  LongitudinalDataset data;
  std::map<std::string, std::size_t> index_of;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    int line = static_cast<int>(r) + 2;
    if (row.size() != table.header.size())
      throw std::runtime_error(path + ":" + std::to_string(line) +
                               ": wrong field count");
    Observation obs;
    obs.time = parse_number(row[t_col], path, line, "time");
    obs.y = parse_number(row[y_col], path, line, "y");
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      if (static_cast<int>(c) == id_col || static_cast<int>(c) == t_col ||
          static_cast<int>(c) == y_col)
        continue;
      double v = parse_number(row[c], path, line, table.header[c]);
      auto it = scale_covariates.find(table.header[c]);
      if (it != scale_covariates.end()) v /= it->second;
      obs.covariates[table.header[c]] = v;
    }
    const std::string& id = row[id_col];
    auto it = index_of.find(id);
    if (it == index_of.end()) {
      index_of[id] = data.subjects.size();
      data.subjects.push_back({id, {obs}});
    } else {
      data.subjects[it->second].obs.push_back(obs);
    }
  }
  if (data.subjects.empty()) throw std::runtime_error(path + ": no data rows");
  data.canonicalize();
  data.validate();
  return data;
}

/// Deterministic float formatting for all CSV/JSON output: the shortest
/// %g form (15 to 17 significant digits) that parses back to the same bits.
inline std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write CSV file: " + path);
  }

  void write_row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      bool needs_quote = fields[i].find_first_of(",\"\n") != std::string::npos;
      if (needs_quote) {
        out_ << '"';
        for (char c : fields[i]) {
          if (c == '"') out_ << "\"\"";
          else out_ << c;
        }
        out_ << '"';
      } else {
        out_ << fields[i];
      }
    }
    out_ << '\n';
  }

  void close() { out_.close(); }

 private:
  std::ofstream out_;
};

}  // namespace galqr
