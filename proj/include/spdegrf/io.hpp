#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spdegrf/errors.hpp"
#include "spdegrf/geometry.hpp"
#include "spdegrf/model.hpp"

namespace spdegrf {

struct StationRecord {
  double lon = 0.0;
  double lat = 0.0;
  double elev_km = 0.0;
  double value = 0.0;
  int year = 0;
};

struct BadLine {
  long line = 0;  // 1-based, header is line 1
  std::string reason;
};

class StationFormatError : public Error {
 public:
  StationFormatError(const std::string& path, std::vector<BadLine> bad);
  const std::vector<BadLine>& bad_lines() const { return bad_; }

 private:
  std::vector<BadLine> bad_;
};

struct StationLoad {
  std::vector<StationRecord> records;
  std::vector<BadLine> rejected;
};

/// Reads `lon,lat,elev_km,value,year` rows. Malformed rows (and rows outside
/// `domain`, when given) are collected with their line numbers; unless
/// `skip_bad` is set any such row makes the load fail.
StationLoad load_stations(const std::filesystem::path& path, const Grid* domain = nullptr,
                          bool skip_bad = false);

std::string stations_csv(const std::vector<StationRecord>& records);
void write_stations(const std::filesystem::path& path, const std::vector<StationRecord>& records);

/// Flat `key = value` configuration; '#' starts a comment.
class RunConfig {
 public:
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key) const;
  std::string str(const std::string& key, const std::string& fallback) const;
  double num(const std::string& key) const;
  double num(const std::string& key, double fallback) const;
  int integer(const std::string& key) const;
  int integer(const std::string& key, int fallback) const;
  bool flag(const std::string& key, bool fallback) const;
  std::vector<double> list(const std::string& key) const;
  std::vector<double> list(const std::string& key, const std::vector<double>& fallback) const;

  /// Resolves a path value relative to the config file's directory.
  std::filesystem::path path(const std::string& key) const;
  std::filesystem::path path(const std::string& key, const std::filesystem::path& fallback) const;

  const std::filesystem::path& base_dir() const { return base_; }

 private:
  std::map<std::string, std::string> values_;
  std::filesystem::path base_;
};

/// Writes through a temporary sibling and renames it into place, so a failed
/// run never leaves a half-written file behind.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// 17 significant digits, enough for any double to round-trip exactly.
std::string format_double(double v);

std::string csv_line(const std::vector<double>& values);

}  // namespace spdegrf
