#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace dre {

/// Independent random streams carved out of one root seed.
enum class Stream : std::uint64_t {
  Partition = 1,
  MemberSeed = 2,
  ModelInit = 3,
  BatchShuffle = 4,
  KMeans = 5,
  Synthetic = 6,
};

/// SplitMix64 finalizer (Steele, Lea & Flood). Bijective on 64-bit words.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Counter-based seed derivation: a pure function of (root, stream, counter).
std::uint64_t derive_seed(std::uint64_t root, Stream stream, std::uint64_t counter = 0) noexcept;

/// Portable generator. The engine is std::mt19937_64, whose output sequence is
/// fixed by the standard; the distributions below are implemented here rather
/// than taken from <random> because those are implementation-defined.
///
///   uniform()      = (engine() >> 11) * 2^-53                in [0, 1)
///   below(n)       = rejection sampling on engine() to remove modulo bias
///   normal()       = Box-Muller on two uniform() draws, both outputs used
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t n);
  double normal();

  /// Fisher-Yates, walking from the back.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dre
