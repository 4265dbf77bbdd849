#pragma once

#include <cstdint>
#include <initializer_list>

namespace redraw {

// SplitMix64 scramble of a single 64-bit value.
uint64_t mix64(uint64_t z);

// Folds an ordered list of values into one stream seed. Used to derive
// independent per-stage / per-sample streams from the global run seed.
uint64_t derive_seed(std::initializer_list<uint64_t> parts);

// Deterministic generator used everywhere randomness is needed. SplitMix64
// core with Box-Muller normals; identical sequences on every run of the
// same binary for the same seed.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();

  // Uniform in [0,1).
  double uniform();
  // Uniform in [a,b).
  double uniform(double a, double b);
  // Uniform integer in [lo,hi], inclusive. Unbiased.
  int uniform_int(int lo, int hi);
  // Standard normal.
  double normal();
  // True with probability p.
  bool bernoulli(double p);

private:
  uint64_t bounded(uint64_t range);

  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace redraw
