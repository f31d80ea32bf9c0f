#pragma once

// Minimal CSV reading/writing for the run-directory files. Fields never
// contain commas or quotes, so no quoting is needed.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace emlab {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest round-trippable-enough representation used in every output file.
inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_num(*v) : ""; }
inline std::string fmt_opt_int(const std::optional<std::int64_t>& v) { return v ? std::to_string(*v) : ""; }

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw CsvError("missing column " + name);
  }
  [[nodiscard]] const std::string& at(std::size_t row, const std::string& col) const {
    return rows.at(row).at(static_cast<std::size_t>(column(col)));
  }
  [[nodiscard]] double num(std::size_t row, const std::string& col) const {
    const auto& s = at(row, col);
    if (s.empty()) return std::nan("");
    return std::stod(s);
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw CsvError("empty csv " + path.string());
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size()) throw CsvError("ragged row in " + path.string());
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::string csv_line(const std::vector<std::string>& fields) {
  std::string s;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) s.push_back(',');
    s += fields[i];
  }
  s.push_back('\n');
  return s;
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& t) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw CsvError("cannot write " + path.string());
    out << csv_line(t.header);
    for (const auto& r : t.rows) out << csv_line(r);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace emlab
