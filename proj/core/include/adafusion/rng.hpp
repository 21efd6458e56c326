// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace adafusion {

/// SplitMix64 output function.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Folds a path of integers (seed, step, tile, ...) into a stream key.
constexpr std::uint64_t derive_key(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t key = mix64(seed + 0x9e3779b97f4a7c15ULL);
  for (std::uint64_t p : path) key = mix64(key ^ mix64(p + 0x632be59bd9b4e019ULL));
  return key;
}

/// Counter-based generator: the n-th draw is a pure function of (key, n), so
/// a stream for any (seed, step, tile) can be recreated without replaying
/// the draws that precede it. Satisfies UniformRandomBitGenerator, so the
/// <random> distributions can sit on top of it.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Independent child stream.
  CounterRng split(std::uint64_t stream) const noexcept {
    return CounterRng(derive_key(key_, {stream}));
  }

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace adafusion
