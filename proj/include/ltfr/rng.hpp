#pragma once

#include <cstdint>
#include <vector>

namespace ltfr {

// Deterministic xoshiro256** generator with hand-rolled distributions.
// All randomness in the project funnels through instances of this class so
// that identical seeds give bitwise-identical results on every platform
// (std::* distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_int(uint64_t n);
  // Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev);
  // Knuth's method; fine for the small means used here.
  int poisson(double mean);

  // Independent stream derived from this generator's seed and a stream id.
  Rng fork(uint64_t stream_id) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(uniform_int(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  // Index sampled from unnormalized nonnegative weights.
  size_t weighted_index(const std::vector<double>& weights);

 private:
  uint64_t state_[4];
  uint64_t seed_;
};

}  // namespace ltfr
