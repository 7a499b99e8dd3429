#pragma once

#include <cmath>
#include <cstddef>

#include "bcdreg/core.hpp"
#include "bcdreg/tomo/geometry.hpp"

namespace bcdreg::tomo {

/**
 * Two-material head-like phantom: block 0 is soft tissue ("brain"),
 * block 1 bone. An elliptic skull shell surrounds a brain interior with two
 * lower-density inclusions; a disc inside the brain carries 1/2 in both
 * channels. Everything lies inside the disc of radius support_radius.
 */
inline BlockVector make_head_phantom(const FanBeamGeometry& g) {
  g.validate();
  const double s = g.support_radius / 0.9;  // shapes were laid out for R = 0.9
  const std::size_t n = g.n;
  const double h = g.pixel_size();
  BlockVector f(2, n * n);
  auto inside = [](double x, double y, double cx, double cy, double ax, double ay) {
    const double u = (x - cx) / ax, v = (y - cy) / ay;
    return u * u + v * v <= 1.0;
  };
  for (std::size_t iy = 0; iy < n; ++iy)
    for (std::size_t ix = 0; ix < n; ++ix) {
      const double x = -1 + (static_cast<double>(ix) + 0.5) * h;
      const double y = -1 + (static_cast<double>(iy) + 0.5) * h;
      double brain = 0.0, bone = 0.0;
      if (inside(x, y, 0, 0, 0.72 * s, 0.86 * s)) bone = 1.0;
      if (inside(x, y, 0, 0, 0.62 * s, 0.76 * s)) {
        bone = 0.0;
        brain = 1.0;
        if (inside(x, y, -0.22 * s, 0.25 * s, 0.12 * s, 0.2 * s)) brain = 0.6;
        if (inside(x, y, 0.25 * s, 0.3 * s, 0.08 * s, 0.08 * s)) brain = 0.8;
        if (inside(x, y, 0.15 * s, -0.35 * s, 0.16 * s, 0.16 * s)) brain = bone = 0.5;
      }
      f(0, iy * n + ix) = brain;
      f(1, iy * n + ix) = bone;
    }
  return f;
}

}  // namespace bcdreg::tomo
