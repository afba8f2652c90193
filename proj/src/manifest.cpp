#include "fdb/manifest.hpp"

#include <cstdio>
#include <sstream>

namespace fdb {

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= static_cast<std::uint64_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a64_hex(const std::string& bytes) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failure on file: " + path);
  return ss.str();
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["tool_version"] = tool_version;
  j["command"] = command;
  j["scenario"] = {{"path", scenario_path}, {"fnv1a64", scenario_hash}};
  j["flags"] = flags;
  j["seed"] = seed;
  j["artifacts"] = artifacts;
  j["wall_seconds"] = wall_seconds;
  return j;
}

void RunManifest::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open manifest for writing: " + path);
  out << to_json().dump(2) << "\n";
  if (!out) throw IoError("write failure on manifest: " + path);
}

CsvWriter::CsvWriter(const std::string& path) : out_(path), path_(path) {
  if (!out_) throw IoError("cannot open CSV for writing: " + path);
}

std::string CsvWriter::format(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void CsvWriter::header(const std::vector<std::string>& cols) {
  cols_ = cols.size();
  raw_row(cols);
}

void CsvWriter::row(const std::vector<double>& vals) {
  std::vector<std::string> cells;
  cells.reserve(vals.size());
  for (double v : vals) cells.push_back(format(v));
  raw_row(cells);
}

void CsvWriter::raw_row(const std::vector<std::string>& cells) {
  if (cols_ != 0 && cells.size() != cols_)
    throw IoError("CSV row width mismatch in " + path_);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
  if (!out_) throw IoError("write failure on CSV: " + path_);
}

void CsvWriter::close() {
  out_.close();
  if (out_.fail()) throw IoError("close failure on CSV: " + path_);
}

}  // namespace fdb
