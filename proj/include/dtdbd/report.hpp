#pragma once

// MetricsReport JSON and the comparison table (per-domain F1, overall F1,
// FNED, FPED, Total; best value per column in bold).

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "dtdbd/metrics.hpp"
#include "json.hpp"

namespace dtdbd {

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& d : r.per_domain)
    per.push_back({{"fnr", d.fnr},
                   {"fpr", d.fpr},
                   {"f1", d.f1},
                   {"support", d.support},
                   {"fnr_defined", d.fnr_defined},
                   {"fpr_defined", d.fpr_defined},
                   {"empty", d.empty}});
  return {{"per_domain", per},   {"overall_f1", r.overall_f1}, {"overall_fnr", r.overall_fnr},
          {"overall_fpr", r.overall_fpr}, {"fned", r.fned},   {"fped", r.fped},
          {"total", r.total},    {"warnings", r.warnings}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    for (const auto& d : j.at("per_domain")) {
      DomainMetrics m;
      m.fnr = d.at("fnr").get<double>();
      m.fpr = d.at("fpr").get<double>();
      m.f1 = d.at("f1").get<double>();
      m.support = d.at("support").get<std::uint64_t>();
      m.fnr_defined = d.value("fnr_defined", true);
      m.fpr_defined = d.value("fpr_defined", true);
      m.empty = d.value("empty", false);
      r.per_domain.push_back(m);
    }
    r.overall_f1 = j.at("overall_f1").get<double>();
    r.overall_fnr = j.value("overall_fnr", 0.0);
    r.overall_fpr = j.value("overall_fpr", 0.0);
    r.fned = j.at("fned").get<double>();
    r.fped = j.at("fped").get<double>();
    r.total = j.at("total").get<double>();
    r.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report schema error: ") + e.what());
  }
  return r;
}

struct RenderedReport {
  std::string markdown;
  std::string csv;
};

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// One row per named report. Total is recomputed as FNED + FPED.
inline RenderedReport render_report(const std::vector<std::pair<std::string, MetricsReport>>& runs,
                                    const std::vector<std::string>& domain_names = {}) {
  if (runs.empty()) throw InputError("render_report: no reports");
  const std::size_t k = runs.front().second.per_domain.size();
  for (const auto& [name, r] : runs)
    if (r.per_domain.size() != k)
      throw InputError("render_report: run '" + name + "' has " + std::to_string(r.per_domain.size()) +
                       " domains, expected " + std::to_string(k));
  std::vector<std::string> header{"Run"};
  for (std::size_t d = 0; d < k; ++d)
    header.push_back(d < domain_names.size() ? domain_names[d] : "D" + std::to_string(d));
  for (const char* h : {"F1", "FNED", "FPED", "Total"}) header.emplace_back(h);

  // values[row][col], col over numeric columns; higher_is_better per column.
  std::vector<std::vector<double>> values;
  for (const auto& [name, r] : runs) {
    std::vector<double> row;
    for (const auto& d : r.per_domain) row.push_back(d.f1);
    row.insert(row.end(), {r.overall_f1, r.fned, r.fped, r.fned + r.fped});
    values.push_back(std::move(row));
  }
  const std::size_t cols = k + 4;
  std::vector<double> best(cols);
  for (std::size_t c = 0; c < cols; ++c) {
    const bool higher = c <= k;
    best[c] = values[0][c];
    for (const auto& row : values) best[c] = higher ? std::max(best[c], row[c]) : std::min(best[c], row[c]);
  }

  RenderedReport out;
  auto join = [](const std::vector<std::string>& cells, const std::string& sep) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? sep : "") + cells[i];
    return s;
  };
  out.markdown = "| " + join(header, " | ") + " |\n|";
  for (std::size_t i = 0; i < header.size(); ++i) out.markdown += i ? "---:|" : "---|";
  out.markdown += "\n";
  out.csv = join(header, ",") + "\n";
  for (std::size_t r = 0; r < runs.size(); ++r) {
    std::vector<std::string> md{runs[r].first}, csv{runs[r].first};
    for (std::size_t c = 0; c < cols; ++c) {
      const auto cell = fmt4(values[r][c]);
      csv.push_back(cell);
      md.push_back(runs.size() > 1 && fmt4(best[c]) == cell ? "**" + cell + "**" : cell);
    }
    out.markdown += "| " + join(md, " | ") + " |\n";
    out.csv += join(csv, ",") + "\n";
  }
  return out;
}

}  // namespace dtdbd
