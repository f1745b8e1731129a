#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace ueg {

/// Seeded generator with platform-independent derived distributions.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  /// Text serialization of the full engine state.
  std::string state() const;
  void restore(const std::string& state);

private:
  std::mt19937_64 engine_;
};

/// Stateless mixing used to derive independent streams (SplitMix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace ueg
