#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "fdb/errors.hpp"

namespace fdb {

// Shortest representation that round-trips a double exactly (17 significant
// digits). All numeric output shared between runs goes through here so the
// determinism contract is byte-level.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Minimal CSV writer: one header, homogeneous double rows, LF line endings.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(const std::vector<double>& row) {
    if (row.size() != header_.size())
      throw IoError("csv row width " + std::to_string(row.size()) +
                    " does not match header width " + std::to_string(header_.size()));
    rows_.push_back(row);
  }

  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < header_.size(); ++i) {
      if (i) out += ',';
      out += header_[i];
    }
    out += '\n';
    for (const auto& row : rows_) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += format_double(row[i]);
      }
      out += '\n';
    }
    return out;
  }

  void write_file(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << to_string();
    if (!f) throw IoError("write failed: " + path);
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<double>> rows_;
};

}  // namespace fdb
