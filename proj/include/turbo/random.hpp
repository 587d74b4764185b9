// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <utility>

namespace turbo {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Sub-seed for stream `stream` of a master seed. Used wherever work fans out
/// (per-sample sampling, per-node agent seeds) so results do not depend on
/// execution order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept;

/// Counter-based uniform in [0, 1): a pure function of (seed, stream, index).
double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept;

/// Seeded generator with platform-independent transforms (the std
/// distributions are implementation-defined, the engine is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace turbo
