#include "spdegrf/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>
#include <unistd.h>

namespace spdegrf {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(s);
  while (std::getline(in, field, sep)) out.push_back(trim(field));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::string describe(const std::vector<BadLine>& bad) {
  std::string msg;
  const std::size_t shown = std::min<std::size_t>(bad.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) {
    msg += "\n  line " + std::to_string(bad[i].line) + ": " + bad[i].reason;
  }
  if (bad.size() > shown) msg += "\n  ... " + std::to_string(bad.size() - shown) + " more";
  return msg;
}

}  // namespace

StationFormatError::StationFormatError(const std::string& path, std::vector<BadLine> bad)
    : Error(path + ": " + std::to_string(bad.size()) + " malformed line(s)" + describe(bad)),
      bad_(std::move(bad)) {}

StationLoad load_stations(const std::filesystem::path& path, const Grid* domain, bool skip_bad) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open station file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(path.string() + ": missing header");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const std::vector<std::string> expected{"lon", "lat", "elev_km", "value", "year"};
  if (split(trim(line), ',') != expected) {
    throw Error(path.string() + ": header must be lon,lat,elev_km,value,year");
  }

  StationLoad out;
  long number = 1;
  while (std::getline(in, line)) {
    ++number;
    const std::string text = trim(line);
    if (text.empty()) continue;
    const auto fields = split(text, ',');
    if (fields.size() != 5) {
      out.rejected.push_back({number, "expected 5 fields, found " + std::to_string(fields.size())});
      continue;
    }
    StationRecord r;
    if (!parse_number(fields[0], r.lon) || !parse_number(fields[1], r.lat) ||
        !parse_number(fields[2], r.elev_km) || !parse_number(fields[3], r.value) ||
        !parse_number(fields[4], r.year)) {
      out.rejected.push_back({number, "non-numeric field"});
      continue;
    }
    if (!std::isfinite(r.lon) || !std::isfinite(r.lat) || !std::isfinite(r.elev_km) ||
        !std::isfinite(r.value)) {
      out.rejected.push_back({number, "non-finite value"});
      continue;
    }
    if (domain && !domain->contains({r.lon, r.lat})) {
      out.rejected.push_back({number, "location outside the configured domain"});
      continue;
    }
    out.records.push_back(r);
  }
  if (!out.rejected.empty() && !skip_bad) throw StationFormatError(path.string(), out.rejected);
  return out;
}

std::string stations_csv(const std::vector<StationRecord>& records) {
  std::string text = "lon,lat,elev_km,value,year\n";
  for (const StationRecord& r : records) {
    text += format_double(r.lon) + ',' + format_double(r.lat) + ',' + format_double(r.elev_km) +
            ',' + format_double(r.value) + ',' + std::to_string(r.year) + '\n';
  }
  return text;
}

void write_stations(const std::filesystem::path& path, const std::vector<StationRecord>& records) {
  write_file_atomic(path, stations_csv(records));
}

// ---------------------------------------------------------------------------
// RunConfig

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  RunConfig cfg = parse(text.str(), path.string());
  cfg.base_ = path.parent_path();
  return cfg;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  long number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty()) {
      throw InvalidArgumentError(origin + ":" + std::to_string(number) + ": expected key = value");
    }
    cfg.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return cfg;
}

std::string RunConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InvalidArgumentError("missing config key '" + key + "'");
  return it->second;
}

std::string RunConfig::str(const std::string& key, const std::string& fallback) const {
  return has(key) ? str(key) : fallback;
}

double RunConfig::num(const std::string& key) const {
  double v = 0.0;
  if (!parse_number(str(key), v)) throw InvalidArgumentError("config key '" + key + "' is not a number");
  return v;
}

double RunConfig::num(const std::string& key, double fallback) const {
  return has(key) ? num(key) : fallback;
}

int RunConfig::integer(const std::string& key) const {
  int v = 0;
  if (!parse_number(str(key), v)) {
    throw InvalidArgumentError("config key '" + key + "' is not an integer");
  }
  return v;
}

int RunConfig::integer(const std::string& key, int fallback) const {
  return has(key) ? integer(key) : fallback;
}

bool RunConfig::flag(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = str(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidArgumentError("config key '" + key + "' is not a boolean");
}

std::vector<double> RunConfig::list(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& item : split(str(key), ',')) {
    double v = 0.0;
    if (!parse_number(item, v)) {
      throw InvalidArgumentError("config key '" + key + "' must be a comma-separated number list");
    }
    out.push_back(v);
  }
  return out;
}

std::vector<double> RunConfig::list(const std::string& key, const std::vector<double>& fallback) const {
  return has(key) ? list(key) : fallback;
}

std::filesystem::path RunConfig::path(const std::string& key) const {
  std::filesystem::path p = str(key);
  return p.is_absolute() ? p : base_ / p;
}

std::filesystem::path RunConfig::path(const std::string& key,
                                      const std::filesystem::path& fallback) const {
  if (has(key)) return path(key);
  return fallback.is_absolute() ? fallback : base_ / fallback;
}

// ---------------------------------------------------------------------------
// Output

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error("failed while writing " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_line(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_double(values[i]);
  }
  out += '\n';
  return out;
}

}  // namespace spdegrf
