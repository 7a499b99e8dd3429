#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace bcdreg::bench {

/**
 * mt19937_64 with hand-rolled variates, so a seed gives the same stream on
 * every standard library:
 *   uniform = (x >> 11) * 2^-53                  in [0, 1)
 *   normal  = Box-Muller on u1 = ((x >> 11) + 1) * 2^-53 (in (0, 1]) and a
 *             uniform u2; the sine partner is cached for the next call.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace bcdreg::bench
