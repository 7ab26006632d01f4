#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace misshift {

// Deterministic random stream. Built on std::mt19937_64 (whose output
// sequence is pinned by the standard) with explicit uniform and normal
// transforms, so identical seeds give bitwise-identical draws on every
// platform. std::normal_distribution is implementation-defined and is
// deliberately not used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; pairs are cached.
  double normal();
  double normal(double mean, double sd);

  // Uniform index in [0, n).
  std::size_t index(std::size_t n);

  void fill_normal(std::vector<double>& out);
  void shuffle(std::vector<std::size_t>& idx);

  // Derives an independent stream from this stream's seed and a tag.
  // Forking does not consume state, so the set of child streams is a pure
  // function of (seed, tag) regardless of how much this stream was used.
  Rng fork(std::string_view tag) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// FNV-1a and splitmix64, used for seed derivation and state hashing.
std::uint64_t fnv1a64(std::string_view s);
std::uint64_t fnv1a64_bytes(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL);
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace misshift
