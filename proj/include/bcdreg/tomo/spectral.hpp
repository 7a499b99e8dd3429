#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bcdreg/core.hpp"
#include "bcdreg/errors.hpp"

namespace bcdreg::tomo {

/**
 * Discrete polychromatic source and material model.
 *
 * mu(i, m) is the attenuation of material m at energy i per unit length,
 * weights[i] the spectrum intensity times the energy bin width. Window b
 * collects the energy indices seen by detector channel b; there is one
 * window per material so that the preconditioning matrix c is square.
 */
struct SpectralModel {
  std::vector<double> energies;
  std::vector<double> weights;
  Matrix mu;
  std::vector<std::vector<std::size_t>> windows;
  Matrix c;

  std::size_t num_energies() const { return energies.size(); }
  std::size_t num_materials() const { return static_cast<std::size_t>(mu.cols()); }

  void validate() const {
    const std::size_t N = energies.size();
    if (N == 0) throw config_error("SpectralModel: no energies");
    if (weights.size() != N) throw config_error("SpectralModel: weights and energies differ in length");
    if (static_cast<std::size_t>(mu.rows()) != N || mu.cols() == 0)
      throw config_error("SpectralModel: attenuation table must be N x B");
    const std::size_t B = num_materials();
    if (windows.size() != B) throw config_error("SpectralModel: need one window per material");
    if (static_cast<std::size_t>(c.rows()) != B || static_cast<std::size_t>(c.cols()) != B)
      throw config_error("SpectralModel: preconditioning matrix must be B x B");
    for (double s : weights)
      if (!(s >= 0) || !std::isfinite(s)) throw config_error("SpectralModel: spectrum weights must be finite and >= 0");
    if (!mu.allFinite()) throw config_error("SpectralModel: attenuation table has non-finite entries");
    std::vector<int> seen(N, 0);
    for (std::size_t b = 0; b < B; ++b) {
      if (windows[b].empty()) throw config_error("SpectralModel: window " + std::to_string(b) + " is empty");
      bool positive = false;
      for (auto i : windows[b]) {
        if (i >= N) throw config_error("SpectralModel: window index out of range");
        if (seen[i]++) throw config_error("SpectralModel: windows overlap at energy " + std::to_string(i));
        positive = positive || weights[i] > 0;
      }
      if (!positive) throw config_error("SpectralModel: window " + std::to_string(b) + " has no positive weight");
    }
    Eigen::JacobiSVD<Matrix> svd(c);
    const auto& sv = svd.singularValues();
    if (!(sv(sv.size() - 1) > 1e-12 * sv(0))) throw config_error("SpectralModel: preconditioning matrix is singular");
  }
};

// Smooth surrogates: a photoelectric-like E^-3 term plus a slowly falling
// Compton-like term. Bone is larger everywhere and falls off more in absolute
// terms; its spectrum-weighted low/high window ratio sits near 1.35 so the
// default preconditioner removes it from the first channel.
inline double surrogate_brain_attenuation(double keV) {
  return 0.25 * (3.0 * std::pow(20.0 / keV, 3) + (1.0 - 0.3 * (keV - 20.0) / 100.0));
}

inline double surrogate_bone_attenuation(double keV) {
  return 1.2 * (0.6 * std::pow(20.0 / keV, 3) + (1.0 - 0.3 * (keV - 20.0) / 100.0));
}

/// Bremsstrahlung-like single-peaked curve, peak 1 at 37 keV.
inline double surrogate_spectrum(double keV) {
  const double x = std::max(keV - 15.0, 0.0);
  return x / 22.0 * std::exp(1.0 - x / 22.0);
}

inline std::vector<double> energy_grid(std::size_t N, double e_min, double e_max) {
  if (N == 0) throw config_error("energy_grid: need at least one energy");
  if (N > 1 && !(e_max > e_min)) throw config_error("energy_grid: need e_max > e_min");
  std::vector<double> e(N);
  for (std::size_t i = 0; i < N; ++i)
    e[i] = N == 1 ? e_min : e_min + (e_max - e_min) * static_cast<double>(i) / static_cast<double>(N - 1);
  return e;
}

using Table = std::vector<std::pair<double, double>>;

/// Two whitespace-separated columns (energy, value); '#' starts a comment.
inline Table read_two_column(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open table " + path);
  Table t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream ss(line);
    double e, v;
    if (!(ss >> e)) continue;
    std::string rest;
    if (!(ss >> v) || (ss >> rest))
      throw config_error(path + ":" + std::to_string(lineno) + ": expected two numeric columns");
    t.emplace_back(e, v);
  }
  if (t.size() < 2) throw config_error(path + ": need at least two rows");
  for (std::size_t i = 1; i < t.size(); ++i)
    if (!(t[i].first > t[i - 1].first)) throw config_error(path + ": energies must increase strictly");
  return t;
}

/// Linear interpolation, constant extrapolation at the ends.
inline std::vector<double> interpolate(const Table& t, const std::vector<double>& at) {
  std::vector<double> out;
  out.reserve(at.size());
  for (double x : at) {
    if (x <= t.front().first) { out.push_back(t.front().second); continue; }
    if (x >= t.back().first) { out.push_back(t.back().second); continue; }
    auto it = std::upper_bound(t.begin(), t.end(), x, [](double v, const auto& p) { return v < p.first; });
    const auto& [x1, y1] = *it;
    const auto& [x0, y0] = *(it - 1);
    out.push_back(y0 + (y1 - y0) * (x - x0) / (x1 - x0));
  }
  return out;
}

struct SpectralOptions {
  std::size_t energies = 10;
  double e_min = 20.0;
  double e_max = 120.0;
  double split = 70.0;  ///< energies below go to window 0
  Matrix c = (Matrix(2, 2) << 1.0, -1.35, -1.0, 2.3).finished();
  std::string spectrum_file;  ///< optional overrides, empty = surrogate
  std::string brain_file;
  std::string bone_file;
};

/// Two materials (0 = brain, 1 = bone), two windows split at `split` keV.
inline SpectralModel make_two_material_model(const SpectralOptions& o = {}) {
  SpectralModel m;
  m.energies = energy_grid(o.energies, o.e_min, o.e_max);
  const std::size_t N = m.energies.size();
  const double de = N > 1 ? (o.e_max - o.e_min) / static_cast<double>(N - 1) : 1.0;

  auto curve = [&](const std::string& file, double (*fallback)(double)) {
    if (!file.empty()) return interpolate(read_two_column(file), m.energies);
    std::vector<double> v(N);
    for (std::size_t i = 0; i < N; ++i) v[i] = fallback(m.energies[i]);
    return v;
  };
  auto spectrum = curve(o.spectrum_file, surrogate_spectrum);
  const double peak = *std::max_element(spectrum.begin(), spectrum.end());
  if (!(peak > 0)) throw config_error("spectrum is identically zero");
  m.weights.resize(N);
  for (std::size_t i = 0; i < N; ++i) m.weights[i] = spectrum[i] / peak * de;

  const auto brain = curve(o.brain_file, surrogate_brain_attenuation);
  const auto bone = curve(o.bone_file, surrogate_bone_attenuation);
  m.mu.resize(static_cast<Eigen::Index>(N), 2);
  for (std::size_t i = 0; i < N; ++i) {
    m.mu(static_cast<Eigen::Index>(i), 0) = brain[i];
    m.mu(static_cast<Eigen::Index>(i), 1) = bone[i];
  }
  m.windows.assign(2, {});
  for (std::size_t i = 0; i < N; ++i) m.windows[m.energies[i] < o.split ? 0 : 1].push_back(i);
  m.c = o.c;
  m.validate();
  return m;
}

}  // namespace bcdreg::tomo
