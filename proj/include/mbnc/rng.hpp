#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mbnc {

// Deterministic random source. All sampling transforms are implemented
// explicitly on top of the (standard-specified) mt19937_64 stream, so the
// sequence of draws for a given seed is identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal();

  // Gamma(shape alpha, scale 1) via Marsaglia-Tsang, boosted for alpha < 1.
  double gamma(double alpha);

  double beta(double a, double b);

  // Unbiased integer in [0, n).
  std::size_t below(std::size_t n);

  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stable sub-stream derivation so independent consumers (init, shuffling,
// curve r-sampling, mixup) never share a stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace mbnc
