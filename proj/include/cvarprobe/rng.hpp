// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

namespace cvarprobe {

/// One SplitMix64 step. Used to expand seeds and to derive per-step
/// sub-seeds; it is a bijection on 64-bit values.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Derives an independent stream seed from a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;

/// xoshiro256** (Blackman and Vigna), seeded by four SplitMix64 outputs.
/// Every draw is defined with integer arithmetic plus IEEE-754 double
/// operations, so streams reproduce bit-for-bit across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept;

  std::uint64_t next_u64() noexcept;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;

  /// Uniform integer in [0, bound), rejection-sampled (no modulo bias).
  /// bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;

  /// Standard normal via Box-Muller; the second variate of each pair is
  /// kept and returned by the next call.
  double normal() noexcept;

 private:
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cvarprobe
