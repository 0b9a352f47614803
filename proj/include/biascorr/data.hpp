#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "biascorr/common.hpp"

namespace biascorr {

// Binary-outcome / regressor pair, one observation of a probit model.
struct YX {
  double y;
  double x;
};

// One AR(1) transition: the lagged value and the current value.
struct Transition {
  double prev;
  double cur;
};

inline bool obs_less(double a, double b) { return a < b; }
inline bool obs_less(const YX& a, const YX& b) {
  return a.y != b.y ? a.y < b.y : a.x < b.x;
}
inline bool obs_less(const Transition& a, const Transition& b) {
  return a.prev != b.prev ? a.prev < b.prev : a.cur < b.cur;
}

// Rectangular panel, unit-major storage: cell(i, t) for i < n, t < T.
template <class Obs>
struct Panel {
  std::size_t n = 0;
  std::size_t T = 0;
  std::vector<Obs> cells;

  const Obs& cell(std::size_t i, std::size_t t) const { return cells[i * T + t]; }
  Obs& cell(std::size_t i, std::size_t t) { return cells[i * T + t]; }
  std::span<const Obs> unit(std::size_t i) const {
    return std::span<const Obs>(cells.data() + i * T, T);
  }
};

// Consecutive-pair view of a time series; drives the conditional AR(1) fit.
inline std::vector<Transition> transitions(std::span<const double> series) {
  if (series.size() < 2) throw ParseError("AR(1) series needs at least two values");
  std::vector<Transition> out;
  out.reserve(series.size() - 1);
  for (std::size_t t = 1; t < series.size(); ++t)
    out.push_back({series[t - 1], series[t]});
  return out;
}

// ---------------------------------------------------------------------------
// CSV loading. Header row required; numeric cells only; values must be finite.

struct Frame {
  std::vector<std::string> header;
  std::vector<std::vector<double>> cols;
  std::size_t rows = 0;

  int find(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return static_cast<int>(j);
    return -1;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace detail

inline Frame read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  Frame f;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto fields = detail::split_csv_line(t);
    if (f.header.empty()) {
      f.header = fields;
      f.cols.assign(fields.size(), {});
      continue;
    }
    if (fields.size() != f.header.size())
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(f.header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    for (std::size_t j = 0; j < fields.size(); ++j) {
      char* end = nullptr;
      double v = std::strtod(fields[j].c_str(), &end);
      if (end == fields[j].c_str() || *end != '\0' || !std::isfinite(v))
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": bad numeric value '" + fields[j] + "'");
      f.cols[j].push_back(v);
    }
    ++f.rows;
  }
  if (f.header.empty()) throw ParseError(path + ": empty file");
  if (f.rows == 0) throw ParseError(path + ": no data rows");
  return f;
}

// One column per observation (z or an ordered series).
inline std::vector<double> load_series_csv(const std::string& path) {
  Frame f = read_csv(path);
  if (f.cols.size() != 1)
    throw ParseError(path + ": expected a single column, got " +
                     std::to_string(f.cols.size()));
  return f.cols[0];
}

// Two columns (y, x), one row per observation.
inline std::vector<YX> load_yx_csv(const std::string& path) {
  Frame f = read_csv(path);
  int jy = f.find("y"), jx = f.find("x");
  if (f.cols.size() != 2 || jy < 0 || jx < 0)
    throw ParseError(path + ": expected columns y,x");
  std::vector<YX> out(f.rows);
  for (std::size_t i = 0; i < f.rows; ++i) out[i] = {f.cols[jy][i], f.cols[jx][i]};
  return out;
}

namespace detail {

// Common grid validation for panel files: periods must be exactly 1..T per
// unit, all units the same length.
template <class Obs, class MakeObs>
Panel<Obs> assemble_panel(const Frame& f, const std::string& path, int junit,
                          int jperiod, MakeObs make) {
  std::map<long long, std::vector<std::pair<long long, Obs>>> units;
  for (std::size_t r = 0; r < f.rows; ++r) {
    long long u = static_cast<long long>(f.cols[junit][r]);
    long long p = static_cast<long long>(f.cols[jperiod][r]);
    if (f.cols[junit][r] != static_cast<double>(u) ||
        f.cols[jperiod][r] != static_cast<double>(p))
      throw ParseError(path + ": unit/period must be integers");
    units[u].push_back({p, make(r)});
  }
  if (units.size() < 2) throw ParseError(path + ": panel needs at least 2 units");
  std::size_t T = units.begin()->second.size();
  if (T < 2) throw ParseError(path + ": panel needs at least 2 periods");
  Panel<Obs> panel;
  panel.n = units.size();
  panel.T = T;
  panel.cells.resize(panel.n * T);
  std::size_t i = 0;
  for (auto& [u, rows] : units) {
    if (rows.size() != T)
      throw ParseError(path + ": unit " + std::to_string(u) + " has " +
                       std::to_string(rows.size()) + " periods, expected " +
                       std::to_string(T));
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t t = 0; t < T; ++t) {
      if (rows[t].first != static_cast<long long>(t) + 1)
        throw ParseError(path + ": unit " + std::to_string(u) +
                         " must have periods 1.." + std::to_string(T));
      panel.cell(i, t) = rows[t].second;
    }
    ++i;
  }
  return panel;
}

}  // namespace detail

// Columns (unit, period, z).
inline Panel<double> load_panel_z_csv(const std::string& path) {
  Frame f = read_csv(path);
  int ju = f.find("unit"), jp = f.find("period"), jz = f.find("z");
  if (ju < 0 || jp < 0 || jz < 0)
    throw ParseError(path + ": expected columns unit,period,z");
  return detail::assemble_panel<double>(f, path, ju, jp,
                                        [&](std::size_t r) { return f.cols[jz][r]; });
}

// Columns (unit, period, y, x).
inline Panel<YX> load_panel_yx_csv(const std::string& path) {
  Frame f = read_csv(path);
  int ju = f.find("unit"), jp = f.find("period"), jy = f.find("y"), jx = f.find("x");
  if (ju < 0 || jp < 0 || jy < 0 || jx < 0)
    throw ParseError(path + ": expected columns unit,period,y,x");
  return detail::assemble_panel<YX>(f, path, ju, jp, [&](std::size_t r) {
    return YX{f.cols[jy][r], f.cols[jx][r]};
  });
}

}  // namespace biascorr
