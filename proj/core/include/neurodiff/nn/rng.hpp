// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_NN_RNG_HPP_
#define NEURODIFF_NN_RNG_HPP_

#include <cstdint>
#include <random>
#include <string_view>

namespace neurodiff::nn {

/// Platform-stable random stream.
///
/// std::mt19937_64 is bit-exact across standard libraries, but the standard
/// distributions are not, so uniform and normal draws are derived here from
/// raw engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finalizer, used to derive independent seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed for an independent sub-stream (e.g. per epoch or per sample index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// FNV-1a over the bytes of `text`.
std::uint64_t hash_string(std::string_view text);

}  // namespace neurodiff::nn

#endif  // NEURODIFF_NN_RNG_HPP_
