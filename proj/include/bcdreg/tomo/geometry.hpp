#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "bcdreg/errors.hpp"
#include "bcdreg/operators.hpp"

namespace bcdreg::tomo {

/**
 * Fan-beam scanning geometry on the square [-1,1]^2.
 *
 * Sources sit on the unit circle at angles 2 pi k / sources. From each
 * source `angles` rays leave at offsets in [-half_fan, half_fan] from the
 * inward normal, endpoints included. A ray is sampled at `samples` equidistant
 * parameters on [0, ray_length] and integrated with the trapezoid rule.
 *
 * Images are row-major n x n, pixel (ix, iy) centred at
 * (-1 + (ix + 0.5) h, -1 + (iy + 0.5) h) with h = 2/n. Sinograms are
 * source-major: bin (k, l) lives at k * angles + l.
 */
struct FanBeamGeometry {
  std::size_t n = 64;
  double support_radius = 0.9;
  std::size_t sources = 60;
  std::size_t angles = 61;
  std::size_t samples = 100;
  double half_fan = std::numbers::pi / 3;
  double ray_length = 2.0;

  void validate() const {
    if (n == 0) throw config_error("FanBeamGeometry: grid size must be positive");
    if (sources == 0 || angles == 0) throw config_error("FanBeamGeometry: need at least one source and one angle");
    if (samples < 2) throw config_error("FanBeamGeometry: need at least two ray samples");
    if (!(ray_length > 0)) throw config_error("FanBeamGeometry: ray length must be positive");
    if (!(half_fan >= 0 && half_fan < std::numbers::pi / 2))
      throw config_error("FanBeamGeometry: half fan angle must lie in [0, pi/2)");
    if (!(support_radius > 0 && support_radius < 1))
      throw config_error("FanBeamGeometry: support radius must lie in (0, 1)");
  }

  double pixel_size() const { return 2.0 / static_cast<double>(n); }
  double sample_spacing() const { return ray_length / static_cast<double>(samples - 1); }
  std::size_t image_size() const { return n * n; }
  std::size_t sino_size() const { return sources * angles; }

  std::array<double, 2> source(std::size_t k) const {
    const double a = 2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(sources);
    return {std::cos(a), std::sin(a)};
  }

  double fan_offset(std::size_t l) const {
    if (angles == 1) return 0.0;
    return -half_fan + 2 * half_fan * static_cast<double>(l) / static_cast<double>(angles - 1);
  }

  /// Unit direction of ray (k, l): the inward normal -source(k) rotated by fan_offset(l).
  std::array<double, 2> direction(std::size_t k, std::size_t l) const {
    const auto a = source(k);
    const double c = std::cos(fan_offset(l)), s = std::sin(fan_offset(l));
    return {-(c * a[0] - s * a[1]), -(s * a[0] + c * a[1])};
  }
};

namespace detail {

// Visit the bilinear stencil of every sample on ray (k, l). The callback gets
// (pixel index, weight) with the trapezoid weight already folded in. Forward
// and adjoint both go through here, which is what makes them transposes.
template <class F>
void for_each_ray_weight(const FanBeamGeometry& g, std::size_t k, std::size_t l, F&& visit) {
  const auto a = g.source(k);
  const auto d = g.direction(k, l);
  const double dt = g.sample_spacing();
  const double h = g.pixel_size();
  const auto n = static_cast<long>(g.n);
  for (std::size_t j = 0; j < g.samples; ++j) {
    const double t = dt * static_cast<double>(j);
    const double w = (j == 0 || j + 1 == g.samples) ? 0.5 * dt : dt;
    const double u = (a[0] + t * d[0] + 1) / h - 0.5;
    const double v = (a[1] + t * d[1] + 1) / h - 0.5;
    const double fu = std::floor(u), fv = std::floor(v);
    const long i0 = static_cast<long>(fu), j0 = static_cast<long>(fv);
    if (i0 < -1 || i0 >= n || j0 < -1 || j0 >= n) continue;
    const double ru = u - fu, rv = v - fv;
    const double wx[2] = {1 - ru, ru}, wy[2] = {1 - rv, rv};
    for (int dy = 0; dy < 2; ++dy) {
      const long iy = j0 + dy;
      if (iy < 0 || iy >= n) continue;
      for (int dx = 0; dx < 2; ++dx) {
        const long ix = i0 + dx;
        if (ix < 0 || ix >= n) continue;
        const double c = w * wx[dx] * wy[dy];
        if (c != 0.0) visit(static_cast<std::size_t>(iy * n + ix), c);
      }
    }
  }
}

inline void check_len(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw shape_error(std::string(what) + ": expected length " + std::to_string(want) + ", got " +
                      std::to_string(got));
}

}  // namespace detail

inline void fan_beam_forward(const FanBeamGeometry& g, std::span<const double> image, std::span<double> sino) {
  detail::check_len(image.size(), g.image_size(), "fan_beam_forward: image");
  detail::check_len(sino.size(), g.sino_size(), "fan_beam_forward: sinogram");
  for (std::size_t k = 0; k < g.sources; ++k)
    for (std::size_t l = 0; l < g.angles; ++l) {
      double acc = 0.0;
      detail::for_each_ray_weight(g, k, l, [&](std::size_t p, double w) { acc += w * image[p]; });
      sino[k * g.angles + l] = acc;
    }
}

inline void fan_beam_adjoint(const FanBeamGeometry& g, std::span<const double> sino, std::span<double> image) {
  detail::check_len(sino.size(), g.sino_size(), "fan_beam_adjoint: sinogram");
  detail::check_len(image.size(), g.image_size(), "fan_beam_adjoint: image");
  std::fill(image.begin(), image.end(), 0.0);
  for (std::size_t k = 0; k < g.sources; ++k)
    for (std::size_t l = 0; l < g.angles; ++l) {
      const double s = sino[k * g.angles + l];
      if (s == 0.0) continue;
      detail::for_each_ray_weight(g, k, l, [&](std::size_t p, double w) { image[p] += w * s; });
    }
}

inline std::vector<double> fan_beam_forward(const FanBeamGeometry& g, std::span<const double> image) {
  std::vector<double> out(g.sino_size());
  fan_beam_forward(g, image, out);
  return out;
}

inline std::vector<double> fan_beam_adjoint(const FanBeamGeometry& g, std::span<const double> sino) {
  std::vector<double> out(g.image_size());
  fan_beam_adjoint(g, sino, out);
  return out;
}

/// The projector as a LinearOp, so operator_norm and the adjoint checks apply to it.
class FanBeamOp final : public LinearOp {
 public:
  explicit FanBeamOp(FanBeamGeometry g) : g_(g) { g_.validate(); }

  const FanBeamGeometry& geometry() const { return g_; }
  std::size_t domain_dim() const override { return g_.image_size(); }
  std::size_t range_dim() const override { return g_.sino_size(); }

 protected:
  void do_apply(std::span<const double> x, std::span<double> y) const override { fan_beam_forward(g_, x, y); }
  void do_adjoint(std::span<const double> y, std::span<double> x) const override { fan_beam_adjoint(g_, y, x); }

 private:
  FanBeamGeometry g_;
};

}  // namespace bcdreg::tomo
