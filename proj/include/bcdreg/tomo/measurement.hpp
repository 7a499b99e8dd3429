#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "bcdreg/core.hpp"
#include "bcdreg/errors.hpp"
#include "bcdreg/tomo/geometry.hpp"
#include "bcdreg/tomo/spectral.hpp"

// Shapes: material maps f are B blocks of n*n pixels, per-energy data are
// N blocks of sinogram length, window data (intensities, preconditioned
// data) are B blocks of sinogram length.

namespace bcdreg::tomo {

inline void check_maps(const SpectralModel& model, const FanBeamGeometry& g, const BlockVector& f) {
  if (f.num_blocks() != model.num_materials() || f.block_size() != g.image_size())
    throw shape_error("material maps: expected " + std::to_string(model.num_materials()) + " blocks of " +
                      std::to_string(g.image_size()) + " pixels");
}

inline void check_window_data(const SpectralModel& model, const FanBeamGeometry& g, const BlockVector& v,
                              const char* what) {
  if (v.num_blocks() != model.num_materials() || v.block_size() != g.sino_size())
    throw shape_error(std::string(what) + ": expected " + std::to_string(model.num_materials()) +
                      " sinograms of length " + std::to_string(g.sino_size()));
}

/// U: per-energy attenuation images mu_i = sum_m mu(i, m) f[m].
inline BlockVector mix_materials(const SpectralModel& model, const BlockVector& f) {
  if (f.num_blocks() != model.num_materials()) throw shape_error("mix_materials: material count mismatch");
  BlockVector out(model.num_energies(), f.block_size());
  for (std::size_t i = 0; i < model.num_energies(); ++i)
    for (std::size_t m = 0; m < f.num_blocks(); ++m)
      axpy(model.mu(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)), f.block(m), out.block(i));
  return out;
}

/// R applied to every block.
inline BlockVector project_each(const FanBeamGeometry& g, const BlockVector& images) {
  BlockVector out(images.num_blocks(), g.sino_size());
  for (std::size_t i = 0; i < images.num_blocks(); ++i) fan_beam_forward(g, images.block(i), out.block(i));
  return out;
}

/// E: componentwise exp(-g).
inline BlockVector exp_stage(const BlockVector& g) {
  BlockVector out = g;
  for (auto& v : out.data()) v = std::exp(-v);
  return out;
}

/// E'(g) h = -exp(-g) h componentwise.
inline BlockVector exp_stage_derivative(const BlockVector& g, const BlockVector& h) {
  require_same_shape(g, h, "exp_stage_derivative");
  BlockVector out = h;
  for (std::size_t j = 0; j < out.size(); ++j) out.data()[j] = -std::exp(-g.data()[j]) * h.data()[j];
  return out;
}

/// V_Y: window sums sum_{i in W_b} s_i e_i.
inline BlockVector window_sum(const SpectralModel& model, const BlockVector& e) {
  if (e.num_blocks() != model.num_energies()) throw shape_error("window_sum: energy count mismatch");
  BlockVector out(model.num_materials(), e.block_size());
  for (std::size_t b = 0; b < model.windows.size(); ++b)
    for (auto i : model.windows[b]) axpy(model.weights[i], e.block(i), out.block(b));
  return out;
}

inline BlockVector ms_forward(const SpectralModel& model, const FanBeamGeometry& g, const BlockVector& f) {
  check_maps(model, g, f);
  if (!f.all_finite()) throw numerical_error("ms_forward: material maps contain non-finite values");
  return window_sum(model, exp_stage(project_each(g, mix_materials(model, f))));
}

/// H[b] = sum_k c(b, k) log I[k].
inline BlockVector precondition(const SpectralModel& model, const BlockVector& I) {
  const std::size_t B = model.num_materials();
  if (I.num_blocks() != B) throw shape_error("precondition: expected one intensity sinogram per window");
  BlockVector logs = I;
  for (auto& v : logs.data()) {
    if (!(v > 0)) throw numerical_error("precondition: non-positive intensity, log undefined");
    v = std::log(v);
  }
  BlockVector H(B, I.block_size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < B; ++k)
      axpy(model.c(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)), logs.block(k), H.block(b));
  return H;
}

/**
 * One forward pass with the intermediates the gradients need.
 * material_sino = R f[m] per material, attenuation = R U f per energy (built
 * from material_sino by linearity of R), intensity = A(f), H = preconditioned.
 */
struct Evaluation {
  BlockVector material_sino;
  BlockVector attenuation;
  BlockVector intensity;
  BlockVector H;
};

/// Rebuild everything downstream of material_sino, which the caller has set.
inline void refresh(const SpectralModel& model, Evaluation& ev) {
  ev.attenuation = mix_materials(model, ev.material_sino);
  ev.intensity = window_sum(model, exp_stage(ev.attenuation));
  ev.H = precondition(model, ev.intensity);
}

inline Evaluation evaluate(const SpectralModel& model, const FanBeamGeometry& g, const BlockVector& f) {
  check_maps(model, g, f);
  if (!f.all_finite()) throw numerical_error("evaluate: material maps contain non-finite values");
  Evaluation ev{project_each(g, f), {}, {}, {}};
  refresh(model, ev);
  return ev;
}

/// Phi_b = 0.5 ||H_b(f) - v_b||^2.
inline double objective(const Evaluation& ev, const BlockVector& v, std::size_t b) {
  double s = 0.0;
  const auto h = ev.H.block(b), vb = v.block(b);
  for (std::size_t j = 0; j < h.size(); ++j) s += (h[j] - vb[j]) * (h[j] - vb[j]);
  return 0.5 * s;
}

/**
 * Partial gradients d_m of sum_b w_b Phi_b for the materials in `which`
 * (the others are left zero). With rho_b = H_b - v_b,
 *
 *   d_m = -sum_k sum_{i in W_k} mu(i,m) R*[ s_i exp(-g_i) q_k / A_k ],
 *   q_k = sum_b w_b c(b,k) rho_b,
 *
 * so each requested material costs one backprojection.
 */
inline BlockVector weighted_gradient(const SpectralModel& model, const FanBeamGeometry& g, const Evaluation& ev,
                                     const BlockVector& v, const std::vector<double>& w,
                                     const std::vector<std::size_t>& which) {
  const std::size_t B = model.num_materials(), M = g.sino_size();
  check_window_data(model, g, v, "gradient data");
  BlockVector q(B, M);
  for (std::size_t b = 0; b < B; ++b) {
    if (w[b] == 0.0) continue;
    const auto h = ev.H.block(b), vb = v.block(b);
    for (std::size_t k = 0; k < B; ++k) {
      const double cw = w[b] * model.c(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k));
      auto qk = q.block(k);
      for (std::size_t j = 0; j < M; ++j) qk[j] += cw * (h[j] - vb[j]);
    }
  }
  for (std::size_t k = 0; k < B; ++k) {
    auto qk = q.block(k);
    const auto a = ev.intensity.block(k);
    for (std::size_t j = 0; j < M; ++j) qk[j] /= a[j];
  }

  BlockVector grad(B, g.image_size());
  std::vector<double> sino(M);
  for (auto m : which) {
    if (m >= B) throw shape_error("gradient: material index out of range");
    std::fill(sino.begin(), sino.end(), 0.0);
    for (std::size_t k = 0; k < B; ++k) {
      const auto qk = q.block(k);
      for (auto i : model.windows[k]) {
        const double coef = -model.mu(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) * model.weights[i];
        if (coef == 0.0) continue;
        const auto gi = ev.attenuation.block(i);
        for (std::size_t j = 0; j < M; ++j) sino[j] += coef * std::exp(-gi[j]) * qk[j];
      }
    }
    fan_beam_adjoint(g, sino, grad.block(m));
  }
  return grad;
}

/// (d_1 Phi_b, ..., d_B Phi_b).
inline BlockVector residual_gradient(const SpectralModel& model, const FanBeamGeometry& g, const BlockVector& f,
                                     const BlockVector& v, std::size_t b) {
  if (b >= model.num_materials()) throw shape_error("residual_gradient: window index out of range");
  const auto ev = evaluate(model, g, f);
  std::vector<double> w(model.num_materials(), 0.0);
  w[b] = 1.0;
  std::vector<std::size_t> all(model.num_materials());
  for (std::size_t m = 0; m < all.size(); ++m) all[m] = m;
  return weighted_gradient(model, g, ev, v, w, all);
}

}  // namespace bcdreg::tomo
