#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace caila {

/// Deterministic 64-bit generator (splitmix64). Byte-identical streams on
/// every platform, unlike the distributions in <random>.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), n > 0. Rejection-free modulo is fine here:
  /// n is always tiny relative to 2^64, so the bias is unobservable.
  int uniform_int(int n);

  /// Standard normal via Box-Muller (both values used alternately).
  double normal();

  /// Child generator for an independent named stream; the parent state is
  /// not advanced, so sibling streams never interleave.
  Rng fork(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = int(v.size()) - 1; i > 0; --i) {
      std::swap(v[std::size_t(i)], v[std::size_t(uniform_int(i + 1))]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Order-sensitive seed combiner (splitmix-style avalanche per term).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d);

/// FNV-1a over raw bytes; pass the previous digest to chain buffers.
std::uint64_t fnv1a64(const void* bytes, std::size_t len,
                      std::uint64_t h = 0xcbf29ce484222325ULL);

inline std::uint64_t fnv1a64(std::span<const float> xs,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(xs.data(), xs.size_bytes(), h);
}

/// Banker's rounding of `x` to the nearest integer, as used when converting
/// a fraction of a population to a count.
long round_half_even(double x);

}  // namespace caila
