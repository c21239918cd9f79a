#include "drate/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace drate {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string strip(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::string where(std::size_t line, const std::string& column) {
  return "line " + std::to_string(line) + ", column '" + column + "'";
}

double parse_cell(const std::string& cell, std::size_t line, const std::string& column) {
  if (cell.empty() || cell == "NA" || cell == "na" || cell == "NaN" || cell == "nan") {
    throw DataError("missing value at " + where(line, column) +
                    " (missing values are not supported)");
  }
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size() || errno == ERANGE) {
    throw DataError("non-numeric value '" + cell + "' at " + where(line, column));
  }
  if (!std::isfinite(v)) {
    throw DataError("non-finite value '" + cell + "' at " + where(line, column));
  }
  return v;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Dataset parse_dataset_csv(const std::string& text, const std::string& treatment,
                          const std::string& outcome) {
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, raw)) {
    ++line_no;
    if (line_no == 1 && raw.rfind("\xEF\xBB\xBF", 0) == 0) raw.erase(0, 3);
    if (strip(raw).empty()) continue;
    for (auto& h : split_row(strip(raw))) header.push_back(strip(h));
  }
  if (header.empty()) throw DataError("dataset has no header line");
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty()) {
      throw DataError("empty column name in header (line " + std::to_string(line_no) + ")");
    }
    for (std::size_t k = 0; k < j; ++k) {
      if (header[k] == header[j]) throw DataError("duplicate column '" + header[j] + "'");
    }
  }
  const auto find = [&](const std::string& name, const char* role) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw DataError(std::string("missing ") + role + " column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t a_col = find(treatment, "treatment");
  const std::size_t y_col = find(outcome, "outcome");
  if (a_col == y_col) throw DataError("treatment and outcome must be different columns");

  std::vector<std::vector<double>> rows;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = strip(raw);
    if (line.empty()) continue;
    const auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw DataError("line " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " fields, header has " +
                      std::to_string(header.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      row[j] = parse_cell(strip(cells[j]), line_no, header[j]);
    }
    if (row[a_col] != 0.0 && row[a_col] != 1.0) {
      throw DataError("treatment must be 0 or 1 at " + where(line_no, header[a_col]));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("dataset has no data rows");

  Dataset data;
  data.treatment_name = treatment;
  data.outcome_name = outcome;
  const auto n = static_cast<Index>(rows.size());
  const auto d = static_cast<Index>(header.size() - 2);
  data.W.resize(n, d);
  data.A.resize(n);
  data.Y.resize(n);
  std::vector<std::size_t> cov_cols;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j == a_col || j == y_col) continue;
    cov_cols.push_back(j);
    data.covariate_names.push_back(header[j]);
  }
  for (Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    data.A[i] = row[a_col];
    data.Y[i] = row[y_col];
    for (Index j = 0; j < d; ++j) data.W(i, j) = row[cov_cols[static_cast<std::size_t>(j)]];
  }
  return data;
}

Dataset read_dataset_csv(const std::string& path, const std::string& treatment,
                         const std::string& outcome) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_dataset_csv(buf.str(), treatment, outcome);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::string format_dataset_csv(const Dataset& data) {
  std::ostringstream out;
  for (const auto& name : data.covariate_names) out << name << ',';
  out << data.treatment_name << ',' << data.outcome_name << '\n';
  for (Index i = 0; i < data.rows(); ++i) {
    for (Index j = 0; j < data.covariates(); ++j) out << num(data.W(i, j)) << ',';
    out << num(data.A[i]) << ',' << num(data.Y[i]) << '\n';
  }
  return out.str();
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset to '" + path + "'");
  out << format_dataset_csv(data);
  if (!out) throw Error("failed writing dataset to '" + path + "'");
}

}  // namespace drate
