#include "redraw/rng.hpp"

#include <cmath>
#include <numbers>

namespace redraw {

uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

uint64_t derive_seed(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0xA5B35705FD1F3D4Dull;
  for (uint64_t p : parts) h = mix64(h ^ p);
  return h;
}

uint64_t Rng::next_u64() {
  uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double a, double b) { return a + (b - a) * uniform(); }

uint64_t Rng::bounded(uint64_t range) {
  // Lemire's multiply-and-reject, unbiased.
  unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * range;
  auto lo = static_cast<uint64_t>(m);
  if (lo < range) {
    uint64_t t = (0 - range) % range;
    while (lo < t) {
      m = static_cast<unsigned __int128>(next_u64()) * range;
      lo = static_cast<uint64_t>(m);
    }
  }
  return static_cast<uint64_t>(m >> 64);
}

int Rng::uniform_int(int lo, int hi) {
  if (hi <= lo) return lo;
  uint64_t range = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
  return lo + static_cast<int>(bounded(range));
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

}  // namespace redraw
