#pragma once

#include <cmath>
#include <cstdint>

namespace bevkit {

// Deterministic generator used everywhere randomness is needed. splitmix64
// keeps the byte-identical-rerun contract independent of the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  float uniform_f(float lo, float hi) { return static_cast<float>(uniform(lo, hi)); }

  float uniform_f() { return static_cast<float>(uniform()); }

  // index in [0, n)
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  // standard normal via Box-Muller, no cached spare so the stream position
  // is a pure function of call count
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  // derive an independent stream, e.g. per scene or per module
  Rng fork(std::uint64_t salt) const {
    Rng r(state_ ^ (salt * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull));
    r.next_u64();
    return r;
  }

 private:
  std::uint64_t state_;
};

}  // namespace bevkit
