#pragma once

// Minimal comma-separated tables: no quoting, header row required.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace cranio::util {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::runtime_error("CSV column '" + name + "' not found");
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty CSV");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size())
      throw std::runtime_error(path.string() + ": row " + std::to_string(t.rows.size() + 1) + " has " +
                               std::to_string(row.size()) + " cells, expected " +
                               std::to_string(t.header.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline double to_double(const std::string& s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error("not a number: '" + s + "'");
  return v;
}

/// Shortest decimal text that round-trips the double exactly.
inline std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

template <typename... Cells>
std::string csv_row(const Cells&... cells) {
  std::string out;
  auto add = [&](const auto& c) {
    if (!out.empty()) out += ',';
    using T = std::decay_t<decltype(c)>;
    if constexpr (std::is_floating_point_v<T>)
      out += format_double(static_cast<double>(c));
    else if constexpr (std::is_integral_v<T>)
      out += std::to_string(c);
    else
      out += c;
  };
  (add(cells), ...);
  return out;
}

}  // namespace cranio::util
