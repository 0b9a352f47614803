#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "biascorr/common.hpp"
#include "biascorr/montecarlo.hpp"

namespace biascorr {

// A summary CSV plus the (n, T) design it came from, recovered from the
// header comment that cmd_simulate writes into every output file.
struct SummaryPanel {
  std::string path;
  std::size_t n = 0;
  std::size_t T = 0;
  SimulationSummary summary;
};

inline SummaryPanel load_summary_panel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  SummaryPanel panel;
  panel.path = path;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] != '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = detail::trim(t.substr(1, eq - 1));
    const std::string value = detail::trim(t.substr(eq + 1));
    try {
      if (key == "dgp.n") panel.n = std::stoul(value);
      if (key == "dgp.T") panel.T = std::stoul(value);
    } catch (const std::exception&) {
      throw ParseError(path + ": bad header value for " + key);
    }
  }
  panel.summary = parse_summary_csv(text);
  return panel;
}

// Merges summary CSVs into one markdown table, two (n, T) panels per row
// band, bands ordered by T then n. All inputs must share the same columns
// and the same estimator list.
inline std::string render_report(std::vector<SummaryPanel> panels) {
  if (panels.empty()) throw ParseError("no summary files given");
  const auto& ref = panels.front().summary;
  for (const auto& p : panels) {
    if (p.summary.levels != ref.levels)
      throw SchemaMismatch(p.path + ": test levels differ across inputs");
    if (p.summary.rows.size() != ref.rows.size())
      throw SchemaMismatch(p.path + ": estimator sets differ across inputs");
    for (std::size_t i = 0; i < ref.rows.size(); ++i)
      if (p.summary.rows[i].name != ref.rows[i].name)
        throw SchemaMismatch(p.path + ": estimator sets differ across inputs");
  }
  std::stable_sort(panels.begin(), panels.end(),
                   [](const SummaryPanel& a, const SummaryPanel& b) {
                     return a.T != b.T ? a.T < b.T : a.n < b.n;
                   });

  auto panel_title = [](const SummaryPanel& p) {
    std::ostringstream os;
    os << "n=" << p.n << ", T=" << p.T;
    return os.str();
  };
  auto value_cells = [&](const EstimatorSummary& row) {
    std::ostringstream os;
    os << fmt3(row.bias) << " | " << fmt3(row.se_sd_ratio) << " | "
       << fmt3(row.mse);
    for (double r : row.rejection) os << " | " << fmt3(r);
    return os.str();
  };

  const std::size_t ncols = 3 + ref.levels.size();
  std::ostringstream os;
  for (std::size_t band = 0; band < panels.size(); band += 2) {
    const bool pair = band + 1 < panels.size();
    os << "| estimator |";
    os << " " << panel_title(panels[band]) << " |";
    for (std::size_t c = 1; c < ncols; ++c) os << " |";
    if (pair) {
      os << " " << panel_title(panels[band + 1]) << " |";
      for (std::size_t c = 1; c < ncols; ++c) os << " |";
    }
    os << "\n| |";
    for (int rep = 0; rep < (pair ? 2 : 1); ++rep) {
      os << " bias | se/sd | mse |";
      for (double l : ref.levels)
        os << " " << static_cast<int>(std::lround(l * 100.0)) << "% |";
    }
    os << "\n|---|";
    for (std::size_t c = 0; c < ncols * (pair ? 2u : 1u); ++c) os << "---|";
    os << "\n";
    for (std::size_t i = 0; i < ref.rows.size(); ++i) {
      os << "| " << ref.rows[i].name << " | "
         << value_cells(panels[band].summary.rows[i]);
      if (pair) os << " | " << value_cells(panels[band + 1].summary.rows[i]);
      os << " |\n";
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace biascorr
