#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace vg3d {

// Seeded RNG with hand-rolled distributions so that streams are identical
// across standard libraries and platforms. std:: distributions are
// implementation-defined, which would break frozen test values.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    return static_cast<int>(engine_() % static_cast<std::uint64_t>(n));
  }

  // Box-Muller, no spare cached so the stream stays position-independent.
  double gaussian(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  // Derives an independent child stream; used to give each sample its own
  // reproducible stream regardless of processing order.
  Rng fork(std::uint64_t salt) {
    return Rng(engine_() ^ (salt * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace vg3d
