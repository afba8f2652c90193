#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdb/errors.hpp"

namespace fdb {

inline constexpr const char* kToolVersion = "0.1.0";

// FNV-1a 64-bit over raw bytes, hex-encoded for manifests.
std::uint64_t fnv1a64(const std::string& bytes);
std::string fnv1a64_hex(const std::string& bytes);

// Whole-file read; IoError with the path on failure.
std::string read_file_bytes(const std::string& path);

// Record of one CLI run: what was executed, on which scenario (by content
// hash), with which flags and seed, and which files it produced. Re-running
// the same tool version with the recorded command line reproduces every
// artifact byte-for-byte.
struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string command;
  std::string scenario_path;
  std::string scenario_hash;
  std::map<std::string, std::string> flags;
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  double wall_seconds = 0;

  nlohmann::json to_json() const;
  void write(const std::string& path) const;
};

// CSV with a header row and fixed 17-significant-digit formatting, so equal
// doubles always serialize to equal bytes.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path);
  void header(const std::vector<std::string>& cols);
  void row(const std::vector<double>& vals);
  void raw_row(const std::vector<std::string>& cells);
  void close();

  static std::string format(double v);

 private:
  std::ofstream out_;
  std::string path_;
  std::size_t cols_ = 0;
};

}  // namespace fdb
