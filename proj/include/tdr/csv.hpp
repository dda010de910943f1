#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tdr/error.hpp"

namespace tdr {

// Shortest round-trip representation; re-parsing yields the same double.
inline std::string format_double(double v) {
  char buf[40];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s, const std::string& context) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t' || *(e - 1) == '\r')) --e;
  auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc{} || r.ptr != e)
    fail(ErrorCategory::parse, "csv", "cannot parse number '" + s + "' (" + context + ")");
  return v;
}

inline long parse_long(const std::string& s, const std::string& context) {
  long v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t' || *(e - 1) == '\r')) --e;
  auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc{} || r.ptr != e)
    fail(ErrorCategory::parse, "csv", "cannot parse integer '" + s + "' (" + context + ")");
  return v;
}

// Simple comma-separated table. Canonical files use no quoting; leading
// '#' lines are collected as comments (provenance headers).
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> comments;
  // 1-based line number in the source file for each row, for error messages.
  std::vector<long> line_numbers;

  int column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    return -1;
  }

  int require_column(const std::string& name) const {
    int i = column_index(name);
    if (i < 0) fail(ErrorCategory::parse, "csv", "missing required column '" + name + "'");
    return i;
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

inline Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "csv", "cannot open '" + path + "'");
  Table t;
  std::string line;
  long lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!have_header && !line.empty() && line[0] == '#') {
      t.comments.push_back(line);
      continue;
    }
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (!have_header) {
      t.columns = fields;
      have_header = true;
      continue;
    }
    if (fields.size() != t.columns.size())
      fail(ErrorCategory::parse, "csv",
           path + ":" + std::to_string(lineno) + ": expected " +
               std::to_string(t.columns.size()) + " fields, got " +
               std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(lineno);
  }
  if (!have_header) fail(ErrorCategory::parse, "csv", path + ": empty file (no header)");
  return t;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) fail(ErrorCategory::io, "csv", "cannot open '" + path + "' for writing");
  }

  void comment(const std::string& text) { out_ << "# " << text << "\n"; }

  void raw_line(const std::string& line) { out_ << line << "\n"; }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

}  // namespace tdr
