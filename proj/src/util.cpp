#include "caila/util.hpp"

#include <cmath>
#include <stdexcept>

namespace caila {

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  return int(next_u64() % std::uint64_t(n));
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on two fresh uniforms; u is nudged away from 0 so log stays
  // finite.
  double u = uniform();
  double v = uniform();
  if (u < 1e-300) u = 1e-300;
  double r = std::sqrt(-2.0 * std::log(u));
  double theta = 6.283185307179586476925286766559 * v;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Rng Rng::fork(std::uint64_t stream) const {
  return Rng(mix_seed(state_, stream));
}

namespace {
std::uint64_t avalanche(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return avalanche(avalanche(a + 0x9e3779b97f4a7c15ULL) ^ (b + 0x9e3779b97f4a7c15ULL));
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  return mix_seed(mix_seed(a, b, c), d);
}

std::uint64_t fnv1a64(const void* bytes, std::size_t len, std::uint64_t h) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

long round_half_even(double x) {
  double fl = std::floor(x);
  double frac = x - fl;
  long lo = long(fl);
  if (frac > 0.5) return lo + 1;
  if (frac < 0.5) return lo;
  return (lo % 2 == 0) ? lo : lo + 1;
}

}  // namespace caila
