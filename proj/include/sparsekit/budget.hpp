// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sparsekit/errors.hpp"

namespace sparsekit {

// Neuron-budget distribution ratios for the three router-weight groups.
struct BudgetRatios {
  double r0 = 1.0;
  double r1 = 1.0;
  double r2 = 1.0;
};

// Slot indices partitioned by router weight: g0 holds the floor(K/3)
// highest-weighted slots, g1 the next floor(K/3), g2 the remainder.
struct ExpertGroups {
  std::vector<int> g0;
  std::vector<int> g1;
  std::vector<int> g2;
};

ExpertGroups group_experts(std::span<const float> topk_weights);

// Per-slot active-neuron counts for a total budget of
// s_active * K * d_ffn neurons, split by group ratios:
// n_e = round_half_up(budget * r_x / sum_x(r_x * |g_x|)) for e in g_x,
// clamped to [0, d_ffn].
std::vector<int> allocate_budget(int top_k, int d_ffn, double s_active,
                                 const ExpertGroups& groups,
                                 const BudgetRatios& ratios);

// Keep the `keep_count` largest-|h| entries of one slot. Built on the same
// magnitude ordering as topk_mask, so equal-ratio budgets reproduce plain
// top-k masks bit for bit.
std::vector<std::uint8_t> apply_budget(std::span<const float> h,
                                       int keep_count);

}  // namespace sparsekit
