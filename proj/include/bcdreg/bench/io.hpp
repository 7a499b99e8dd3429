#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcdreg/errors.hpp"
#include "bcdreg/solvers.hpp"

namespace bcdreg::bench {

inline constexpr const char* kTraceHeader = "k,cycle,block,d,step,residual,err2,errV,objective";

/// 17 significant digits: enough to round-trip any double.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_trace(const std::vector<StepRecord>& trace) {
  std::string out = std::string(kTraceHeader) + "\n";
  for (const auto& r : trace) {
    out += std::to_string(r.k) + ',' + std::to_string(r.cycle) + ',' + std::to_string(r.block) + ',' +
           std::to_string(r.d) + ',' + fmt(r.step) + ',' + fmt(r.residual) + ',' + fmt(r.err2) + ',' +
           fmt(r.errV) + ',' + fmt(r.objective) + '\n';
  }
  return out;
}

namespace detail {

inline double parse_double(const std::string& s, std::size_t line) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw config_error("trace line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const auto v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') throw config_error("trace line " + std::to_string(line) + ": bad integer '" + s + "'");
  return v;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace detail

inline std::vector<StepRecord> parse_trace(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) throw config_error("trace: missing or wrong header");
  std::vector<StepRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw config_error("trace line " + std::to_string(lineno) + ": expected 9 fields");
    StepRecord r;
    r.k = detail::parse_uint(f[0], lineno);
    r.cycle = detail::parse_uint(f[1], lineno);
    r.block = detail::parse_uint(f[2], lineno);
    r.d = static_cast<int>(detail::parse_uint(f[3], lineno));
    r.step = detail::parse_double(f[4], lineno);
    r.residual = detail::parse_double(f[5], lineno);
    r.err2 = detail::parse_double(f[6], lineno);
    r.errV = detail::parse_double(f[7], lineno);
    r.objective = detail::parse_double(f[8], lineno);
    out.push_back(r);
  }
  return out;
}

inline void emit_csv(const std::vector<StepRecord>& trace, const std::filesystem::path& path) {
  detail::write_file(path, format_trace(trace));
}

/// Field-by-field equality that treats NaN as equal to NaN.
inline bool same_trace(const std::vector<StepRecord>& a, const std::vector<StepRecord>& b) {
  auto eq = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto &x = a[i], &y = b[i];
    if (x.k != y.k || x.cycle != y.cycle || x.block != y.block || x.d != y.d || !eq(x.step, y.step) ||
        !eq(x.residual, y.residual) || !eq(x.err2, y.err2) || !eq(x.errV, y.errV) || !eq(x.objective, y.objective))
      return false;
  }
  return true;
}

/**
 * Binary PGM (P5), 16-bit big-endian, maxval 65535. `values` is an n x n
 * row-major image whose row 0 is the bottom of the picture (y = -1), so rows
 * are written last to first. Values map linearly from [lo, hi], clamped.
 */
inline void write_pgm16(const std::filesystem::path& path, const std::vector<double>& values, std::size_t n,
                        double lo = 0.0, double hi = 1.0) {
  if (values.size() != n * n) throw shape_error("write_pgm16: expected an n x n image");
  std::string data = "P5\n" + std::to_string(n) + " " + std::to_string(n) + "\n65535\n";
  data.reserve(data.size() + 2 * n * n);
  for (std::size_t row = n; row-- > 0;)
    for (std::size_t col = 0; col < n; ++col) {
      double t = (values[row * n + col] - lo) / (hi - lo);
      t = std::isnan(t) ? 0.0 : std::clamp(t, 0.0, 1.0);
      const auto q = static_cast<std::uint16_t>(std::lround(t * 65535.0));
      data.push_back(static_cast<char>(q >> 8));
      data.push_back(static_cast<char>(q & 0xff));
    }
  detail::write_file(path, data);
}

/// Files written by one run, listed with the config hash in manifest.txt.
class Manifest {
 public:
  Manifest(std::filesystem::path dir, std::string config_hash) : dir_(std::move(dir)), hash_(std::move(config_hash)) {}

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path add(const std::string& name) {
    files_.push_back(name);
    return dir_ / name;
  }

  const std::vector<std::string>& files() const { return files_; }

  void write() const {
    std::string text = "config_hash " + hash_ + "\n";
    for (const auto& f : files_) text += f + "\n";
    detail::write_file(dir_ / "manifest.txt", text);
  }

 private:
  std::filesystem::path dir_;
  std::string hash_;
  std::vector<std::string> files_;
};

}  // namespace bcdreg::bench
