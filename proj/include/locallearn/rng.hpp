// Copyright (c) 2026, the locallearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

namespace locallearn {

// splitmix64. Small, fast, and fully portable: the same seed produces the
// same stream on every platform, which keeps init, shuffling, augmentation
// and synthetic data bit-reproducible without depending on libstdc++
// distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 bits of entropy.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  uint64_t state_;
};

/// Derives an independent stream from a master seed. Component seeds are
/// decoupled so e.g. changing the augmentation stream never perturbs init.
inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
  Rng r(master ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
  return r.next_u64();
}

}  // namespace locallearn
