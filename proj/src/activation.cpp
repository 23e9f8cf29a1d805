// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/activation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sparsekit/router.hpp"

namespace sparsekit {

float silu(float x) { return x / (1.0f + std::exp(-x)); }

std::vector<float> swiglu_rows(std::span<const float> gate_out,
                               std::span<const float> up_out) {
  if (gate_out.size() != up_out.size()) {
    throw ShapeError("swiglu_rows: gate length " +
                     std::to_string(gate_out.size()) + " vs up length " +
                     std::to_string(up_out.size()));
  }
  std::vector<float> h(gate_out.size());
  for (std::size_t i = 0; i < gate_out.size(); ++i) {
    h[i] = silu(gate_out[i]) * up_out[i];
  }
  return h;
}

std::vector<std::uint8_t> mask_smallest_magnitudes(std::span<const float> h,
                                                   int count) {
  const int n = static_cast<int>(h.size());
  std::vector<std::uint8_t> mask(h.size(), 1);
  if (count <= 0) return mask;
  if (count >= n) {
    std::fill(mask.begin(), mask.end(), std::uint8_t{0});
    return mask;
  }
  std::vector<int> order(h.size());
  std::iota(order.begin(), order.end(), 0);
  // stable sort keeps equal magnitudes in index order, so the lower index
  // is cleared first
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::fabs(h[static_cast<std::size_t>(a)]) <
           std::fabs(h[static_cast<std::size_t>(b)]);
  });
  for (int k = 0; k < count; ++k) {
    mask[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = 0;
  }
  return mask;
}

std::vector<std::uint8_t> topk_mask(std::span<const float> h,
                                    SparsityLevel s) {
  const int n = static_cast<int>(h.size());
  const long raw = static_cast<long>(std::floor(s.s * n + 0.5));
  const int n_off = static_cast<int>(std::clamp<long>(raw, 0, n));
  return mask_smallest_magnitudes(h, n_off);
}

std::vector<std::uint8_t> threshold_mask(std::span<const float> gate_out,
                                         float threshold) {
  if (!(threshold >= 0.0f)) {
    throw ConfigError("threshold must be >= 0");
  }
  std::vector<std::uint8_t> mask(gate_out.size());
  for (std::size_t i = 0; i < gate_out.size(); ++i) {
    mask[i] = std::fabs(silu(gate_out[i])) >= threshold ? 1 : 0;
  }
  return mask;
}

int default_capacity(int top_k, int d_ffn) {
  const int k_total = top_k * d_ffn;
  return (k_total + 31) / 32 * 32;
}

ActiveIndexRow compact_active(std::span<const std::uint8_t> masks,
                              std::span<const std::int32_t> topk_ids,
                              int d_ffn, int capacity) {
  if (capacity < 0) {
    throw ConfigError("compact_active: capacity must be >= 0");
  }
  const std::size_t n_slots = topk_ids.size();
  if (masks.size() != n_slots * static_cast<std::size_t>(d_ffn)) {
    throw ShapeError("compact_active: mask size " +
                     std::to_string(masks.size()) + " != slots * d_ffn");
  }

  ActiveIndexRow row;
  row.flat.assign(static_cast<std::size_t>(capacity), kPadIndex);
  row.active_per_slot.assign(n_slots, 0);

  std::int32_t flat_offset = 0;
  for (std::size_t s = 0; s < n_slots; ++s) {
    const std::int32_t base = topk_ids[s] * d_ffn;
    const std::uint8_t* slot_mask = masks.data() + s * d_ffn;
    std::int32_t running = 0;
    for (int i = 0; i < d_ffn; ++i) {
      if (!slot_mask[i]) continue;
      const std::int32_t wpos = flat_offset + running;
      if (wpos < capacity) {
        row.flat[static_cast<std::size_t>(wpos)] = base + i;
      }
      ++running;
    }
    const std::int32_t actual = std::min(running, capacity - flat_offset);
    row.active_per_slot[s] = actual;
    flat_offset += actual;
  }
  row.total_active = flat_offset;
  return row;
}

}  // namespace sparsekit
