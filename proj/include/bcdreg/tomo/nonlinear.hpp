#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "bcdreg/core.hpp"
#include "bcdreg/errors.hpp"
#include "bcdreg/tomo/measurement.hpp"

namespace bcdreg::tomo {

enum class NonlinearMethod { bcd, landweber };

struct NonlinearOptions {
  NonlinearMethod method = NonlinearMethod::bcd;
  /// One step for all materials, or one per material.
  std::vector<double> step{1.0};
  /// BCD: cycles of B steps. Landweber: iterations.
  std::size_t cycles = 0;
  /// BCD updates block b from d_b Phi_b alone; false uses d_b (Phi_1 + ... + Phi_B).
  bool own_window = true;
  bool box = true;
  double lower = 0.0;
  double upper = 1.0;
  /// Keep f every this many rows (0 = never); the final iterate is always in `f`.
  std::size_t snapshot_stride = 0;
};

struct NonlinearRecord {
  std::size_t k = 0;
  std::size_t cycle = 0;
  std::size_t block = 0;  ///< updated material, B for a full Landweber update
  double step = 0.0;
  std::vector<double> phi;  ///< Phi_b at f_{k+1}
  std::vector<double> rel_error;  ///< ||f[b] - f*[b]||^2 / ||f*[b]||^2 at f_{k+1}; empty without reference
  double err2 = std::numeric_limits<double>::quiet_NaN();  ///< ||f_{k+1} - f*||
};

struct NonlinearState {
  BlockVector f;
  std::size_t k = 0;
  std::vector<NonlinearRecord> history;
  std::vector<double> initial_phi;
  std::vector<double> initial_rel_error;
  std::vector<std::pair<std::size_t, BlockVector>> snapshots;
};

inline std::vector<double> relative_errors(const BlockVector& f, const BlockVector& ref) {
  require_same_shape(f, ref, "relative_errors");
  std::vector<double> e(f.num_blocks());
  for (std::size_t b = 0; b < f.num_blocks(); ++b) {
    const auto x = f.block(b), r = ref.block(b);
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      num += (x[j] - r[j]) * (x[j] - r[j]);
      den += r[j] * r[j];
    }
    e[b] = den > 0 ? num / den : std::numeric_limits<double>::quiet_NaN();
  }
  return e;
}

namespace detail {

inline std::vector<double> all_phi(const Evaluation& ev, const BlockVector& v) {
  std::vector<double> p(v.num_blocks());
  for (std::size_t b = 0; b < p.size(); ++b) p[b] = objective(ev, v, b);
  return p;
}

// Reproject the listed materials and refresh the cached forward pass.
inline void reevaluate(const SpectralModel& model, const FanBeamGeometry& g, const BlockVector& f,
                       const std::vector<std::size_t>& changed, Evaluation& ev, std::size_t k) {
  try {
    for (auto m : changed) fan_beam_forward(g, f.block(m), ev.material_sino.block(m));
    refresh(model, ev);
  } catch (const numerical_error& e) {
    throw numerical_error("nonlinear iteration " + std::to_string(k) + ": " + e.what() +
                          " (step size too large?)");
  }
}

}  // namespace detail

/**
 * Projected gradient iterations for min sum_b Phi_b(f), Phi_b = 0.5||H_b(f) - v_b||^2.
 *
 * BCD step k updates material b = k mod B only; Landweber updates all
 * materials from the gradient of the sum. After each update every pixel is
 * clamped to [lower, upper] when `box` is set.
 */
inline NonlinearState run_nonlinear(const SpectralModel& model, const FanBeamGeometry& g, BlockVector f0,
                                    const BlockVector& v, const NonlinearOptions& opt,
                                    const BlockVector* reference = nullptr) {
  model.validate();
  g.validate();
  check_maps(model, g, f0);
  check_window_data(model, g, v, "run_nonlinear data");
  if (!f0.all_finite() || !v.all_finite()) throw numerical_error("run_nonlinear: non-finite input");
  if (reference) check_maps(model, g, *reference);
  const std::size_t B = model.num_materials();
  if (opt.step.size() != 1 && opt.step.size() != B)
    throw config_error("run_nonlinear: need one step size or one per material");
  for (double s : opt.step)
    if (!(s >= 0) || !std::isfinite(s)) throw config_error("run_nonlinear: step sizes must be finite and >= 0");
  if (opt.box) {
    if (!(opt.lower < opt.upper)) throw config_error("run_nonlinear: empty box");
    for (double x : f0.data())
      if (x < opt.lower || x > opt.upper) throw config_error("run_nonlinear: initial guess outside the box");
  }
  auto step_of = [&](std::size_t m) { return opt.step.size() == 1 ? opt.step[0] : opt.step[m]; };
  auto clamp = [&](std::span<double> x) {
    if (opt.box)
      for (auto& e : x) e = std::clamp(e, opt.lower, opt.upper);
  };

  NonlinearState st{std::move(f0), 0, {}, {}, {}, {}};
  std::vector<std::size_t> all(B);
  for (std::size_t m = 0; m < B; ++m) all[m] = m;
  // B projections here, then one per BCD step or B per Landweber step: a
  // cycle and an iteration both cost B projections and B backprojections.
  Evaluation ev{BlockVector(B, g.sino_size()), {}, {}, {}};
  detail::reevaluate(model, g, st.f, all, ev, 0);
  st.initial_phi = detail::all_phi(ev, v);
  if (reference) st.initial_rel_error = relative_errors(st.f, *reference);

  const bool bcd = opt.method == NonlinearMethod::bcd;
  const std::size_t total = bcd ? opt.cycles * B : opt.cycles;
  st.history.reserve(total);

  for (std::size_t k = 0; k < total; ++k) {
    NonlinearRecord rec;
    rec.k = k;
    std::vector<std::size_t> changed = all;
    if (bcd) {
      const std::size_t b = k % B;
      std::vector<double> w(B, opt.own_window ? 0.0 : 1.0);
      w[b] = 1.0;
      const auto grad = weighted_gradient(model, g, ev, v, w, {b});
      axpy(-step_of(b), grad.block(b), st.f.block(b));
      clamp(st.f.block(b));
      changed = {b};
      rec.cycle = k / B;
      rec.block = b;
      rec.step = step_of(b);
    } else {
      const auto grad = weighted_gradient(model, g, ev, v, std::vector<double>(B, 1.0), all);
      for (std::size_t m = 0; m < B; ++m) {
        axpy(-step_of(m), grad.block(m), st.f.block(m));
        clamp(st.f.block(m));
      }
      rec.cycle = k;
      rec.block = B;
      rec.step = step_of(0);
    }
    if (!st.f.all_finite()) throw numerical_error("nonlinear iteration " + std::to_string(k) + ": iterate not finite");
    detail::reevaluate(model, g, st.f, changed, ev, k + 1);
    rec.phi = detail::all_phi(ev, v);
    if (reference) {
      rec.rel_error = relative_errors(st.f, *reference);
      rec.err2 = norm2(difference(st.f, *reference));
    }
    st.history.push_back(std::move(rec));
    st.k = k + 1;
    if (opt.snapshot_stride && st.k % opt.snapshot_stride == 0) st.snapshots.emplace_back(st.k, st.f);
  }
  return st;
}

}  // namespace bcdreg::tomo
