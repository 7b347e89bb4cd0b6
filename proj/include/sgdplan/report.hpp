#pragma once

// Tabular/CSV/JSON report rendering with stable ordering and fixed float
// formatting, so identical inputs produce byte-identical output.

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace sgdplan {

enum class ReportFormat { Table, Csv, Json };

inline ReportFormat parse_format(const std::string& s) {
  if (s == "table") return ReportFormat::Table;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw std::runtime_error("unknown format '" + s + "' (table|csv|json)");
}

/// Locale-independent number formatting: up to 6 significant digits, '.'
/// decimal point.
inline std::string fmt_num(double v, int sig = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", sig, v);
  return buf;
}

inline std::string fmt_int(long v) { return std::to_string(v); }

struct Report {
  std::string command;  // echo of what produced this report
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> notes;  // provenance: formulas/constants used

  void row(std::vector<std::string> cells) { rows.push_back(std::move(cells)); }

  std::string render(ReportFormat f) const {
    switch (f) {
      case ReportFormat::Table: return render_table();
      case ReportFormat::Csv: return render_csv();
      case ReportFormat::Json: return render_json();
    }
    return "";
  }

  std::string render_table() const {
    std::vector<size_t> w(columns.size(), 0);
    for (size_t c = 0; c < columns.size(); ++c) w[c] = columns[c].size();
    for (const auto& r : rows)
      for (size_t c = 0; c < r.size() && c < w.size(); ++c)
        w[c] = std::max(w[c], r[c].size());
    std::ostringstream os;
    os << "# " << command << "\n";
    auto line = [&](const std::vector<std::string>& cells) {
      for (size_t c = 0; c < cells.size(); ++c) {
        os << cells[c];
        if (c + 1 < cells.size())
          os << std::string(w[c] - cells[c].size() + 2, ' ');
      }
      os << "\n";
    };
    line(columns);
    std::vector<std::string> rule;
    for (size_t c = 0; c < columns.size(); ++c)
      rule.push_back(std::string(w[c], '-'));
    line(rule);
    for (const auto& r : rows) line(r);
    for (const auto& n : notes) os << "note: " << n << "\n";
    return os.str();
  }

  std::string render_csv() const {
    auto esc = [](const std::string& s) {
      if (s.find_first_of(",\"\n") == std::string::npos) return s;
      std::string out = "\"";
      for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
      }
      return out + "\"";
    };
    std::ostringstream os;
    for (size_t c = 0; c < columns.size(); ++c)
      os << esc(columns[c]) << (c + 1 < columns.size() ? "," : "\n");
    for (const auto& r : rows)
      for (size_t c = 0; c < r.size(); ++c)
        os << esc(r[c]) << (c + 1 < r.size() ? "," : "\n");
    return os.str();
  }

  std::string render_json() const {
    nlohmann::ordered_json j;
    j["schema"] = 1;
    j["command"] = command;
    j["columns"] = columns;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      nlohmann::ordered_json obj;
      for (size_t c = 0; c < r.size() && c < columns.size(); ++c)
        obj[columns[c]] = r[c];
      j["rows"].push_back(obj);
    }
    j["notes"] = notes;
    return j.dump(2) + "\n";
  }
};

}  // namespace sgdplan
