#pragma once

#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rho/errors.hpp"

// Small CSV helpers shared by every on-disk format in the project.
//
// Files open with one or more comment lines of the form
//   # key=value key=value ...
// followed by a header row and data rows. Values never contain commas or
// spaces, so no quoting is needed.

namespace rho::csv {

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& fields, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += sep;
    out += fields[i];
  }
  return out;
}

inline double parse_double(const std::string& text, const std::string& context) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) throw FormatError(context + ": not a number: '" + text + "'");
  return v;
}

inline long long parse_int(const std::string& text, const std::string& context) {
  char* end = nullptr;
  const long long v = std::strtoll(text.c_str(), &end, 10);
  if (text.empty() || end != text.c_str() + text.size()) throw FormatError(context + ": not an integer: '" + text + "'");
  return v;
}

using Metadata = std::map<std::string, std::string>;

inline std::string metadata_line(const Metadata& meta) {
  std::string line = "#";
  for (const auto& [k, v] : meta) line += " " + k + "=" + v;
  return line;
}

/// Parses "# k=v k=v" into a map; non-matching tokens are ignored.
inline Metadata parse_metadata_line(std::string_view line) {
  Metadata meta;
  if (line.empty() || line.front() != '#') return meta;
  std::istringstream in{std::string(line.substr(1))};
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq != std::string::npos) meta[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return meta;
}

/// The creation-time line; written separately so that byte comparisons of
/// otherwise identical outputs can skip it.
inline std::string timestamp_line() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[64];
  std::strftime(buf, sizeof(buf), "# created=%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline bool is_timestamp_line(std::string_view line) { return line.starts_with("# created="); }

/// A parsed file: merged metadata from all comment lines, the header row and
/// data rows.
struct Table {
  Metadata meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw FormatError("csv: missing column '" + name + "'");
  }
};

inline Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("csv: cannot open " + path);
  Table t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      for (auto& [k, v] : parse_metadata_line(line)) t.meta[k] = v;
      continue;
    }
    auto fields = split(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw FormatError("csv: row with " + std::to_string(fields.size()) + " fields in " + path + " (header has " +
                        std::to_string(t.header.size()) + ")");
    }
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) throw FormatError("csv: no header row in " + path);
  return t;
}

/// Lines of a file with the timestamp line removed.
inline std::vector<std::string> comparable_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("csv: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!is_timestamp_line(line)) lines.push_back(line);
  return lines;
}

}  // namespace rho::csv
