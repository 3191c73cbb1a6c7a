#pragma once

#include <charconv>
#include <fstream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lf2i/calibration.hpp"
#include "lf2i/core/types.hpp"
#include "lf2i/simulators.hpp"

namespace lf2i::io {

/// Shortest round-trip decimal form; keeps CSV output byte-stable.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

inline double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error("csv line " + std::to_string(line) + ": not a number: '" + s + "'");
  return v;
}

/// Header theta_0..theta_k, x_0..x_m, y.
inline void write_labeled_sample(std::ostream& os, const std::vector<LabeledExample>& sample) {
  if (sample.empty()) throw std::invalid_argument("write_labeled_sample: empty sample");
  const std::size_t p = sample.front().theta.size(), d = sample.front().x.size();
  for (std::size_t k = 0; k < p; ++k) os << "theta_" << k << ',';
  for (std::size_t k = 0; k < d; ++k) os << "x_" << k << ',';
  os << "y\n";
  for (const auto& ex : sample) {
    for (double v : ex.theta.values) os << format_double(v) << ',';
    for (double v : ex.x) os << format_double(v) << ',';
    os << ex.y << '\n';
  }
}

inline std::vector<LabeledExample> read_labeled_sample(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: missing header");
  const auto header = split_csv_line(line);
  std::size_t p = 0, d = 0;
  for (const auto& h : header) {
    if (h.rfind("theta_", 0) == 0) ++p;
    else if (h.rfind("x_", 0) == 0) ++d;
  }
  if (p == 0 || d == 0 || header.size() != p + d + 1 || header.back() != "y")
    throw std::runtime_error("csv: header must be theta_*, x_*, y");
  std::vector<LabeledExample> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                               " fields");
    LabeledExample ex;
    ex.theta.values.resize(p);
    ex.x.resize(d);
    for (std::size_t k = 0; k < p; ++k) ex.theta.values[k] = parse_double(cells[k], lineno);
    for (std::size_t k = 0; k < d; ++k) ex.x[k] = parse_double(cells[p + k], lineno);
    const double y = parse_double(cells.back(), lineno);
    if (y != 0.0 && y != 1.0) throw std::runtime_error("csv line " + std::to_string(lineno) + ": label must be 0 or 1");
    ex.y = static_cast<int>(y);
    out.push_back(std::move(ex));
  }
  return out;
}

/// Dataset rows as x_0..x_m.
inline void write_dataset(std::ostream& os, const Dataset& D) {
  for (std::size_t k = 0; k < D.dim(); ++k) os << (k ? "," : "") << "x_" << k;
  os << '\n';
  for (std::size_t i = 0; i < D.size(); ++i) {
    const auto r = D.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) os << (k ? "," : "") << format_double(r[k]);
    os << '\n';
  }
}

inline Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: missing header");
  const std::size_t d = split_csv_line(line).size();
  Matrix m(0, d);
  std::size_t lineno = 1;
  std::vector<double> row(d);
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != d) throw std::runtime_error("csv line " + std::to_string(lineno) + ": wrong field count");
    for (std::size_t k = 0; k < d; ++k) row[k] = parse_double(cells[k], lineno);
    m.append_row(row);
  }
  Dataset D(std::move(m));
  D.validate();
  return D;
}

/// Statistic dump: theta_0..theta_k, lambda (full theta draws).
inline void write_statistics(std::ostream& os, const SimulationTable& t) {
  for (std::size_t k = 0; k < t.thetas.cols(); ++k) os << "theta_" << k << ',';
  os << "lambda\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (double v : t.thetas.row(i)) os << format_double(v) << ',';
    os << format_double(t.lambda[i]) << '\n';
  }
}

/// Cutoff table: theta_0..theta_k, c_hat.
inline void write_cutoffs(std::ostream& os, std::span<const ParamPoint> grid, std::span<const double> cut) {
  if (grid.size() != cut.size()) throw std::invalid_argument("write_cutoffs: size mismatch");
  const std::size_t d = grid.empty() ? 0 : grid.front().size();
  for (std::size_t k = 0; k < d; ++k) os << "theta_" << k << ',';
  os << "c_hat\n";
  for (std::size_t j = 0; j < grid.size(); ++j) {
    for (double v : grid[j].values) os << format_double(v) << ',';
    os << format_double(cut[j]) << '\n';
  }
}

/// Inverse of write_cutoffs.
inline std::pair<std::vector<ParamPoint>, std::vector<double>> read_cutoffs(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: missing header");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header.back() != "c_hat") throw std::runtime_error("csv: header must end in c_hat");
  const std::size_t d = header.size() - 1;
  std::vector<ParamPoint> grid;
  std::vector<double> cut;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != d + 1) throw std::runtime_error("csv line " + std::to_string(lineno) + ": wrong field count");
    ParamPoint p{std::vector<double>(d)};
    for (std::size_t k = 0; k < d; ++k) p[k] = parse_double(cells[k], lineno);
    grid.push_back(std::move(p));
    cut.push_back(parse_double(cells[d], lineno));
  }
  return {std::move(grid), std::move(cut)};
}

template <class Fn>
void write_file(const std::string& path, Fn&& fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  fn(os);
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace lf2i::io
