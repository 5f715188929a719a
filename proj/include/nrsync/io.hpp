#pragma once

// CSV tables with a JSON provenance sidecar.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"
#include "json.hpp"

namespace nrsync {

inline constexpr std::string_view version = "0.3.0";

namespace io {

/// Round-trippable, locale-independent number formatting.
inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (x == 0.0) return "0";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.15g", x);
  return buf;
}

inline std::string quote_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

class Cell {
 public:
  Cell(double v) : text_(format_number(v)) {}
  Cell(int v) : text_(std::to_string(v)) {}
  Cell(long v) : text_(std::to_string(v)) {}
  Cell(long long v) : text_(std::to_string(v)) {}
  Cell(unsigned long v) : text_(std::to_string(v)) {}
  Cell(unsigned long long v) : text_(std::to_string(v)) {}
  Cell(bool v) : text_(v ? "true" : "false") {}
  Cell(std::string_view v) : text_(quote_field(v)) {}
  Cell(const std::string& v) : text_(quote_field(v)) {}
  Cell(const char* v) : text_(quote_field(v)) {}
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(const std::vector<Cell>& row) {
    if (row.size() != header_.size())
      throw std::logic_error("csv row has " + std::to_string(row.size()) + " fields, header has " +
                             std::to_string(header_.size()));
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += ',';
      line += row[i].text();
    }
    rows_.push_back(std::move(line));
  }

  std::size_t rows() const { return rows_.size(); }

  std::string str() const {
    std::string out;
    for (std::size_t i = 0; i < header_.size(); ++i) {
      if (i) out += ',';
      out += quote_field(header_[i]);
    }
    out += "\r\n";
    for (const auto& r : rows_) out += r + "\r\n";
    return out;
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open output file '" + path + "'");
    f << str();
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::string> rows_;
};

inline std::string sidecar_path(const std::string& csv_path) { return csv_path + ".json"; }

/// Writes the sidecar next to `csv_path`: tool version, subcommand, resolved
/// config and tolerances, plus any extra result metadata.
inline void write_sidecar(const std::string& csv_path, const std::string& subcommand, const nlohmann::json& config,
                          const nlohmann::json& tolerances, const nlohmann::json& results = nlohmann::json::object()) {
  nlohmann::json j;
  j["tool"] = "nrsync";
  j["version"] = std::string(version);
  j["subcommand"] = subcommand;
  j["config"] = config;
  j["tolerances"] = tolerances;
  j["results"] = results;
  std::ofstream f(sidecar_path(csv_path), std::ios::binary);
  if (!f) throw ConfigError("cannot open sidecar '" + sidecar_path(csv_path) + "'");
  f << j.dump(2) << '\n';
}

}  // namespace io
}  // namespace nrsync
