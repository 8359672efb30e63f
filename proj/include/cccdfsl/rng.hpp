#ifndef CCCDFSL_RNG_HPP
#define CCCDFSL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace cccdfsl {

// Seeded RNG with bit-reproducible uniform/gaussian draws. mt19937_64 output
// is fully specified by the standard; the double conversions below avoid the
// implementation-defined std::*_distribution adaptors so streams are identical
// across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller; one value per call, no cached state
  double gaussian() {
    const double u1 = static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 eng_;
};

// Stateless mix for deriving independent per-task seeds from a master seed.
inline uint64_t derive_seed(uint64_t master, uint64_t index) {
  uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

} // namespace cccdfsl

#endif
