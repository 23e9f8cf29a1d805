// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sparsekit/errors.hpp"

namespace sparsekit {

// Fraction of neurons deactivated, in [0, 1].
struct SparsityLevel {
  double s = 0.0;

  explicit SparsityLevel(double v) : s(v) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError("sparsity must lie in [0, 1]");
    }
  }
};

// x * sigmoid(x)
float silu(float x);

// h[i] = silu(gate_out[i]) * up_out[i]
std::vector<float> swiglu_rows(std::span<const float> gate_out,
                               std::span<const float> up_out);

// Mask with exactly `count` entries cleared: those with the smallest |h|,
// ties resolved by clearing the lower index first. Shared kernel behind
// topk_mask and the budget module so both agree bit for bit.
std::vector<std::uint8_t> mask_smallest_magnitudes(std::span<const float> h,
                                                   int count);

// Offline analysis mask: deactivate the round-half-up(s * N) smallest |h|.
std::vector<std::uint8_t> topk_mask(std::span<const float> h, SparsityLevel s);

// Runtime mask: keep neuron i iff |silu(gate_out[i])| >= threshold. One
// pass, no sorting.
std::vector<std::uint8_t> threshold_mask(std::span<const float> gate_out,
                                         float threshold);

// Default padded capacity of the per-token active-index buffer:
// K * N rounded up to a multiple of 32.
int default_capacity(int top_k, int d_ffn);

// One token's compacted active-neuron indices: flat entries are
// expert_id * N + neuron in (slot ascending, neuron ascending) order, the
// remainder padded with kPadIndex (-1).
struct ActiveIndexRow {
  std::vector<std::int32_t> flat;             // capacity entries
  std::vector<std::int32_t> active_per_slot;  // one count per slot
  std::int32_t total_active = 0;
};

// Compact per-slot masks (top_k * d_ffn entries, slot-major) into an
// ActiveIndexRow. Entries beyond `capacity` are dropped and the per-slot
// count clamped to the remaining space; truncation is defined behavior.
ActiveIndexRow compact_active(std::span<const std::uint8_t> masks,
                              std::span<const std::int32_t> topk_ids,
                              int d_ffn, int capacity);

}  // namespace sparsekit
