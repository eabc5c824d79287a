// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace zorephrase {

// Philox4x32-10 counter-based generator (Salmon et al., "Parallel random
// numbers: as easy as 1, 2, 3"). Every output block is a pure function of a
// 128-bit counter and a 64-bit key, so any coordinate of a random vector can
// be regenerated on demand without carrying generator state.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter generate(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      ctr = single_round(ctr, key);
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

  static constexpr Key key_from(std::uint64_t k) noexcept {
    return {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  }

  static constexpr Counter counter_from(std::uint64_t lo, std::uint64_t hi) noexcept {
    return {static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(lo >> 32),
            static_cast<std::uint32_t>(hi), static_cast<std::uint32_t>(hi >> 32)};
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static constexpr Counter single_round(const Counter& c, const Key& k) noexcept {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// Uniform double in the open interval (0, 1) from two 32-bit words.
constexpr double uniform_open01(std::uint32_t hi, std::uint32_t lo) noexcept {
  const std::uint64_t bits =
      ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;  // 53 bits
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

/// Standard normal draw keyed by (key, counter). Box-Muller over one Philox
/// block; only the cosine branch is used so each counter maps to exactly one
/// draw.
inline double keyed_normal(std::uint64_t key, std::uint64_t ctr_lo,
                           std::uint64_t ctr_hi) noexcept {
  const auto block = Philox4x32::generate(Philox4x32::counter_from(ctr_lo, ctr_hi),
                                          Philox4x32::key_from(key));
  const double u1 = uniform_open01(block[0], block[1]);
  const double u2 = uniform_open01(block[2], block[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Uniform double in (0, 1) keyed by (key, counter).
inline double keyed_uniform(std::uint64_t key, std::uint64_t ctr_lo,
                            std::uint64_t ctr_hi) noexcept {
  const auto block = Philox4x32::generate(Philox4x32::counter_from(ctr_lo, ctr_hi),
                                          Philox4x32::key_from(key));
  return uniform_open01(block[0], block[1]);
}

/// Mixes a seed with a stream tag so independent consumers (directions,
/// batches, initialization, data generation) never share a key.
constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Small sequential generator built on Philox for code that wants a stream
/// of draws (initialization, shuffles, synthetic data). Deterministic in
/// (key, draw index).
class KeyedStream {
 public:
  explicit KeyedStream(std::uint64_t key) noexcept : key_(key) {}

  double normal() noexcept { return keyed_normal(key_, next_++, 0x5eed); }
  double uniform() noexcept { return keyed_uniform(key_, next_++, 0xf1a7); }

  /// Uniform integer in [0, bound). Bound must be positive.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const auto v = static_cast<std::uint64_t>(uniform() * static_cast<double>(bound));
    return v < bound ? v : bound - 1;
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

 private:
  std::uint64_t key_;
  std::uint64_t next_ = 0;
};

}  // namespace zorephrase
