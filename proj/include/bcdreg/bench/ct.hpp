#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "bcdreg/bench/config.hpp"
#include "bcdreg/bench/io.hpp"
#include "bcdreg/bench/rng.hpp"
#include "bcdreg/tomo/nonlinear.hpp"
#include "bcdreg/tomo/phantom.hpp"

namespace bcdreg::bench {

struct CtSetup {
  tomo::FanBeamGeometry geometry;
  tomo::SpectralOptions spectral;
  std::vector<double> bcd_step{50.0, 0.5};
  double landweber_step = 0.5;
  std::size_t exact_cycles = 300;
  std::size_t noisy_cycles = 116;
  double noise_level = 0.02;  ///< std as a fraction of max |H(f*)|
  std::uint64_t seed = 20240502;
  bool own_window = true;
  bool box = true;
  std::size_t dump_every = 0;  ///< extra PGM dumps every this many cycles (0: final only)
  bool exact = true;
  bool noisy = true;
  std::string output_dir = "out/ct";

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k{
        "problem",      "n",          "support_radius", "sources",       "angles",      "samples",
        "half_fan_deg", "ray_length", "energies",       "e_min",         "e_max",       "split",
        "c",            "spectrum_file", "brain_file",  "bone_file",     "bcd_step",    "landweber_step",
        "exact_cycles", "noisy_cycles", "noise_level",  "seed",          "own_window",  "box",
        "dump_every",   "run_exact",  "run_noisy",      "output_dir"};
    return k;
  }

  static CtSetup from_config(const Config& c) {
    c.require_known(keys());
    if (c.get_string("problem", "ct") != "ct") throw config_error("problem must be 'ct'");
    CtSetup s;
    auto& g = s.geometry;
    g.n = c.get_uint("n", g.n);
    g.support_radius = c.get_double("support_radius", g.support_radius);
    g.sources = c.get_uint("sources", g.sources);
    g.angles = c.get_uint("angles", g.angles);
    g.samples = c.get_uint("samples", g.samples);
    g.half_fan = c.get_double("half_fan_deg", 60.0) * std::numbers::pi / 180.0;
    g.ray_length = c.get_double("ray_length", g.ray_length);
    g.validate();
    auto& sp = s.spectral;
    sp.energies = c.get_uint("energies", sp.energies);
    sp.e_min = c.get_double("e_min", sp.e_min);
    sp.e_max = c.get_double("e_max", sp.e_max);
    sp.split = c.get_double("split", sp.split);
    if (c.has("c")) {
      const auto v = c.get_doubles("c", {});
      if (v.size() != 4) throw config_error("c: expected four entries c11 c12 c21 c22");
      sp.c = (Matrix(2, 2) << v[0], v[1], v[2], v[3]).finished();
    }
    sp.spectrum_file = c.get_string("spectrum_file", "");
    sp.brain_file = c.get_string("brain_file", "");
    sp.bone_file = c.get_string("bone_file", "");
    s.bcd_step = c.get_doubles("bcd_step", s.bcd_step);
    s.landweber_step = c.get_double("landweber_step", s.landweber_step);
    s.exact_cycles = c.get_uint("exact_cycles", s.exact_cycles);
    s.noisy_cycles = c.get_uint("noisy_cycles", s.noisy_cycles);
    s.noise_level = c.get_double("noise_level", s.noise_level);
    s.seed = c.get_uint("seed", s.seed);
    s.own_window = c.get_bool("own_window", s.own_window);
    s.box = c.get_bool("box", s.box);
    s.dump_every = c.get_uint("dump_every", s.dump_every);
    s.exact = c.get_bool("run_exact", s.exact);
    s.noisy = c.get_bool("run_noisy", s.noisy);
    s.output_dir = c.get_string("output_dir", s.output_dir);
    if (!(s.noise_level >= 0)) throw config_error("noise_level must be >= 0");
    return s;
  }
};

struct CtProblem {
  tomo::FanBeamGeometry geometry;
  tomo::SpectralModel model;
  BlockVector phantom;
  BlockVector v_exact;
  BlockVector v_noisy;
  double noise_std = 0.0;

  static CtProblem build(const CtSetup& s) {
    CtProblem p{s.geometry, tomo::make_two_material_model(s.spectral), tomo::make_head_phantom(s.geometry), {}, {}, 0.0};
    p.v_exact = tomo::precondition(p.model, tomo::ms_forward(p.model, p.geometry, p.phantom));
    double peak = 0.0;
    for (double x : p.v_exact.data()) peak = std::max(peak, std::abs(x));
    p.noise_std = s.noise_level * peak;
    p.v_noisy = p.v_exact;
    Rng rng(s.seed);
    if (p.noise_std > 0)
      for (auto& x : p.v_noisy.data()) x += p.noise_std * rng.normal();
    return p;
  }
};

/// Trace rows: residual = ||H_b - v_b|| (BCD) or ||H - v|| (Landweber) at f_k, objective = sum_b Phi_b at f_{k+1}.
inline std::vector<StepRecord> to_step_records(const tomo::NonlinearState& st) {
  std::vector<StepRecord> out;
  std::vector<double> prev = st.initial_phi;
  for (const auto& r : st.history) {
    StepRecord s;
    s.k = r.k;
    s.cycle = r.cycle;
    s.block = r.block;
    s.d = 1;
    s.step = r.step;
    double total_prev = 0.0, total = 0.0;
    for (double v : prev) total_prev += v;
    for (double v : r.phi) total += v;
    s.residual = r.block < prev.size() ? std::sqrt(2 * prev[r.block]) : std::sqrt(2 * total_prev);
    s.err2 = r.err2;
    s.objective = total;
    out.push_back(s);
    prev = r.phi;
  }
  return out;
}

inline std::string format_rel_errors(const tomo::NonlinearState& st) {
  const std::size_t B = st.initial_phi.size();
  std::string out = "k,cycle,block";
  for (std::size_t b = 0; b < B; ++b) out += ",e" + std::to_string(b);
  for (std::size_t b = 0; b < B; ++b) out += ",phi" + std::to_string(b);
  out += '\n';
  for (const auto& r : st.history) {
    out += std::to_string(r.k) + ',' + std::to_string(r.cycle) + ',' + std::to_string(r.block);
    for (std::size_t b = 0; b < B; ++b) out += ',' + fmt(r.rel_error.empty() ? std::nan("") : r.rel_error[b]);
    for (std::size_t b = 0; b < B; ++b) out += ',' + fmt(r.phi[b]);
    out += '\n';
  }
  return out;
}

/// Index of the smallest e[b] over the recorded rows (first one on ties).
inline std::size_t argmin_rel_error(const tomo::NonlinearState& st, std::size_t b) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < st.history.size(); ++k)
    if (st.history[k].rel_error[b] < st.history[best].rel_error[b]) best = k;
  return best;
}

struct CtResult {
  CtProblem problem;
  tomo::NonlinearState exact_bcd;
  tomo::NonlinearState exact_landweber;
  tomo::NonlinearState noisy_bcd;
  tomo::NonlinearState noisy_landweber;
  std::vector<std::string> files;
};

inline CtResult run_ct_experiment(const CtSetup& s, bool write = true, const std::string& config_hash = "") {
  CtResult r{CtProblem::build(s), {}, {}, {}, {}, {}};
  const auto& P = r.problem;
  const std::size_t B = P.model.num_materials();
  const BlockVector f0(B, P.geometry.image_size());

  auto options = [&](tomo::NonlinearMethod m, std::size_t cycles) {
    tomo::NonlinearOptions o;
    o.method = m;
    o.step = m == tomo::NonlinearMethod::bcd ? s.bcd_step : std::vector<double>{s.landweber_step};
    o.cycles = cycles;
    o.own_window = s.own_window;
    o.box = s.box;
    o.snapshot_stride = s.dump_every * (m == tomo::NonlinearMethod::bcd ? B : 1);
    return o;
  };
  using tomo::NonlinearMethod;
  if (s.exact) {
    r.exact_bcd = tomo::run_nonlinear(P.model, P.geometry, f0, P.v_exact, options(NonlinearMethod::bcd, s.exact_cycles), &P.phantom);
    r.exact_landweber = tomo::run_nonlinear(P.model, P.geometry, f0, P.v_exact,
                                            options(NonlinearMethod::landweber, s.exact_cycles), &P.phantom);
  }
  if (s.noisy) {
    r.noisy_bcd = tomo::run_nonlinear(P.model, P.geometry, f0, P.v_noisy, options(NonlinearMethod::bcd, s.noisy_cycles), &P.phantom);
    r.noisy_landweber = tomo::run_nonlinear(P.model, P.geometry, f0, P.v_noisy,
                                            options(NonlinearMethod::landweber, s.noisy_cycles), &P.phantom);
  }

  if (write) {
    Manifest m(s.output_dir, config_hash);
    const std::size_t n = P.geometry.n;
    const char* names[] = {"brain", "bone"};
    auto dump = [&](const std::string& stem, const BlockVector& f) {
      for (std::size_t b = 0; b < B; ++b) {
        const std::string mat = b < 2 ? names[b] : "material" + std::to_string(b);
        write_pgm16(m.add(stem + "_" + mat + ".pgm"), {f.block(b).begin(), f.block(b).end()}, n);
      }
    };
    dump("ct_phantom", P.phantom);
    auto emit = [&](const std::string& stem, const tomo::NonlinearState& st, std::size_t rows_per_cycle) {
      emit_csv(to_step_records(st), m.add(stem + ".csv"));
      detail::write_file(m.add(stem + "_rel_errors.csv"), format_rel_errors(st));
      for (const auto& [k, f] : st.snapshots) dump(stem + "_c" + std::to_string(k / rows_per_cycle), f);
      dump(stem + "_final", st.f);
    };
    if (s.exact) {
      emit("ct_exact_bcd", r.exact_bcd, B);
      emit("ct_exact_landweber", r.exact_landweber, 1);
    }
    if (s.noisy) {
      emit("ct_noisy_bcd", r.noisy_bcd, B);
      emit("ct_noisy_landweber", r.noisy_landweber, 1);
    }
    m.write();
    r.files = m.files();
  }
  return r;
}

}  // namespace bcdreg::bench
