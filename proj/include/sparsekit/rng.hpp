// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

namespace sparsekit {

// splitmix64 (Steele/Lea/Flood): the state advances by the golden-ratio
// increment 0x9E3779B97F4A7C15 and the output is the avalanche-mixed state.
// Every random quantity in this project (weights, tokens, reservoir picks)
// derives from this generator, so a (seed, shape) pair maps to one exact
// byte sequence on every platform.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform float in [-scale, +scale) with 24-bit resolution.
  float next_symmetric(float scale) {
    const float u = static_cast<float>(next() >> 40) * 0x1.0p-24f;  // [0,1)
    return (2.0f * u - 1.0f) * scale;
  }

  // Uniform integer in [0, bound). The modulo bias is below bound / 2^64,
  // far under anything observable at the sample sizes used here.
  std::uint64_t next_below(std::uint64_t bound) { return next() % bound; }

  // Standard normal via Box-Muller; draws two uniforms per generated pair
  // and hands back the cached second value on the next call.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_unit();
    const double u2 = next_unit();
    if (u1 <= 0.0) u1 = 0x1.0p-53;  // keep log() finite
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace sparsekit
