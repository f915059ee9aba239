#pragma once

#include <cstdint>
#include <vector>

namespace atgnn {

// Self-contained xoshiro256++ generator with explicit distribution code.
// Standard-library distributions are implementation-defined, which would make
// checkpoints and logs differ across toolchains; every draw here is pinned.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (second draw cached).
  double normal();
  double normal(double mean, double stddev);
  // Gamma(alpha, 1) via Marsaglia-Tsang squeeze.
  double gamma(double alpha);
  double beta(double a, double b);
  // k distinct values from {0..n-1}, in draw order.
  std::vector<int> sample_distinct(int n, int k);

 private:
  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream seed from a base seed and a stream index.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace atgnn
