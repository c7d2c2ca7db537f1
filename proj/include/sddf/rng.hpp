#pragma once

#include <cmath>
#include <cstdint>

#include "sddf/types.hpp"

namespace sddf {

/// Small deterministic generator (splitmix64). Output streams depend only on
/// the seed, not on the standard library implementation, so files produced
/// from the same seed are byte-identical across builds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  Vec3 normal3() { return Vec3(normal(), normal(), normal()); }

  Vec3 uniform_box(const Vec3& lo, const Vec3& hi) {
    return Vec3(uniform(lo.x(), hi.x()), uniform(lo.y(), hi.y()),
                uniform(lo.z(), hi.z()));
  }

  /// Uniform point on the unit sphere.
  Vec3 unit_vector() {
    Vec3 v = normal3();
    double n = v.norm();
    while (n < 1e-12) {
      v = normal3();
      n = v.norm();
    }
    return v / n;
  }

  /// Derive an independent stream (for sub-tasks that must not perturb the
  /// parent sequence).
  Rng fork() { return Rng(next_u64()); }

 private:
  std::uint64_t state_;
};

}  // namespace sddf
