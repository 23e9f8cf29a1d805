// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/budget.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sparsekit/activation.hpp"

namespace sparsekit {

ExpertGroups group_experts(std::span<const float> topk_weights) {
  const int k = static_cast<int>(topk_weights.size());
  if (k < 1) {
    throw ConfigError("group_experts: need at least one slot");
  }
  std::vector<int> order(topk_weights.size());
  std::iota(order.begin(), order.end(), 0);
  // stable: equal weights keep slot order, so the lower slot ranks first
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return topk_weights[static_cast<std::size_t>(a)] >
           topk_weights[static_cast<std::size_t>(b)];
  });

  const int third = k / 3;
  ExpertGroups groups;
  groups.g0.assign(order.begin(), order.begin() + third);
  groups.g1.assign(order.begin() + third, order.begin() + 2 * third);
  groups.g2.assign(order.begin() + 2 * third, order.end());
  return groups;
}

std::vector<int> allocate_budget(int top_k, int d_ffn, double s_active,
                                 const ExpertGroups& groups,
                                 const BudgetRatios& ratios) {
  if (!(s_active >= 0.0 && s_active <= 1.0)) {
    throw ConfigError("allocate_budget: s_active must lie in [0, 1]");
  }
  if (ratios.r0 < 0.0 || ratios.r1 < 0.0 || ratios.r2 < 0.0) {
    throw ConfigError("allocate_budget: ratios must be non-negative");
  }
  const double denom = ratios.r0 * static_cast<double>(groups.g0.size()) +
                       ratios.r1 * static_cast<double>(groups.g1.size()) +
                       ratios.r2 * static_cast<double>(groups.g2.size());
  if (!(denom > 0.0)) {
    throw ConfigError("allocate_budget: no ratio mass on non-empty groups");
  }

  // Each expert's count rounds once, so before clamping the total deviates
  // from the budget by at most one half per expert (K/2 overall).
  const double budget = s_active * top_k * d_ffn;
  std::vector<int> counts(static_cast<std::size_t>(top_k), 0);
  const std::pair<const std::vector<int>*, double> spans[3] = {
      {&groups.g0, ratios.r0}, {&groups.g1, ratios.r1}, {&groups.g2, ratios.r2}};
  int assigned = 0;
  for (const auto& [members, ratio] : spans) {
    const long raw =
        static_cast<long>(std::floor(budget * ratio / denom + 0.5));
    const int n_e = static_cast<int>(std::clamp<long>(raw, 0, d_ffn));
    for (int slot : *members) {
      if (slot < 0 || slot >= top_k) {
        throw IndexError("allocate_budget: slot " + std::to_string(slot) +
                         " outside [0, " + std::to_string(top_k) + ")");
      }
      counts[static_cast<std::size_t>(slot)] = n_e;
      ++assigned;
    }
  }
  if (assigned != top_k) {
    throw ConfigError("allocate_budget: groups must partition the slots");
  }
  return counts;
}

std::vector<std::uint8_t> apply_budget(std::span<const float> h,
                                       int keep_count) {
  const int n = static_cast<int>(h.size());
  if (keep_count < 0 || keep_count > n) {
    throw ConfigError("apply_budget: keep_count outside [0, N]");
  }
  return mask_smallest_magnitudes(h, n - keep_count);
}

}  // namespace sparsekit
