// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "sparsekit/activation.hpp"
#include "sparsekit/budget.hpp"
#include "sparsekit/rng.hpp"
#include "support.hpp"

using namespace sparsekit;

TEST_CASE("group_experts splits K into thirds with the remainder in g2") {
  SUBCASE("K=6") {
    const std::vector<float> w = {0.3f, 0.25f, 0.2f, 0.15f, 0.07f, 0.03f};
    const ExpertGroups g = group_experts(w);
    CHECK(g.g0 == std::vector<int>{0, 1});
    CHECK(g.g1 == std::vector<int>{2, 3});
    CHECK(g.g2 == std::vector<int>{4, 5});
  }
  SUBCASE("K=7") {
    const std::vector<float> w = {0.7f, 0.6f, 0.5f, 0.4f, 0.3f, 0.2f, 0.1f};
    const ExpertGroups g = group_experts(w);
    CHECK(g.g0.size() == 2);
    CHECK(g.g1.size() == 2);
    CHECK(g.g2.size() == 3);
  }
  SUBCASE("K=1") {
    const std::vector<float> w = {1.0f};
    const ExpertGroups g = group_experts(w);
    CHECK(g.g0.empty());
    CHECK(g.g1.empty());
    CHECK(g.g2 == std::vector<int>{0});
  }
  SUBCASE("descending order with ties toward the lower slot") {
    const std::vector<float> w = {0.2f, 0.5f, 0.2f, 0.1f, 0.5f, 0.1f};
    const ExpertGroups g = group_experts(w);
    CHECK(g.g0 == std::vector<int>{1, 4});
    CHECK(g.g1 == std::vector<int>{0, 2});
    CHECK(g.g2 == std::vector<int>{3, 5});
  }
}

TEST_CASE("allocate_budget hand case: 3:2:1 over K=6, D=8, half active") {
  const std::vector<float> w = {0.3f, 0.25f, 0.2f, 0.15f, 0.07f, 0.03f};
  const ExpertGroups groups = group_experts(w);
  const auto counts =
      allocate_budget(6, 8, 0.5, groups, BudgetRatios{3.0, 2.0, 1.0});
  CHECK(counts == std::vector<int>{6, 6, 4, 4, 2, 2});
  CHECK(std::accumulate(counts.begin(), counts.end(), 0) == 24);
}

TEST_CASE("allocate_budget equal ratios degenerate to uniform counts") {
  const std::vector<float> w = {0.4f, 0.3f, 0.2f, 0.06f, 0.03f, 0.01f};
  const ExpertGroups groups = group_experts(w);
  const auto counts = allocate_budget(6, 16, 0.25, groups, BudgetRatios{});
  for (int c : counts) CHECK(c == 4);  // round_half_up(0.25 * 16)
}

TEST_CASE("allocate_budget zero active fraction and bad ratios") {
  const std::vector<float> w = {0.5f, 0.3f, 0.2f};
  const ExpertGroups groups = group_experts(w);
  const auto counts =
      allocate_budget(3, 8, 0.0, groups, BudgetRatios{3.0, 2.0, 1.0});
  CHECK(counts == std::vector<int>{0, 0, 0});

  CHECK_THROWS_AS(
      allocate_budget(3, 8, 0.5, groups, BudgetRatios{0.0, 0.0, 0.0}),
      ConfigError);
  CHECK_THROWS_AS(
      allocate_budget(3, 8, 0.5, groups, BudgetRatios{-1.0, 1.0, 1.0}),
      ConfigError);
}

TEST_CASE("allocate_budget: K=1 puts all ratio mass on g2") {
  const std::vector<float> w = {1.0f};
  const ExpertGroups groups = group_experts(w);
  // all-zero mass on the only populated group is a config error
  CHECK_THROWS_AS(
      allocate_budget(1, 8, 0.5, groups, BudgetRatios{3.0, 2.0, 0.0}),
      ConfigError);
  const auto counts =
      allocate_budget(1, 8, 0.5, groups, BudgetRatios{3.0, 2.0, 1.0});
  CHECK(counts == std::vector<int>{4});
}

TEST_CASE("allocate_budget rounding slack and clamping bounds") {
  SplitMix64 rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    const int top_k = 1 + static_cast<int>(rng.next_below(8));
    const int d_ffn = 1 + static_cast<int>(rng.next_below(64));
    const double s_active = rng.next_unit();
    BudgetRatios ratios{rng.next_unit() * 4.0, rng.next_unit() * 4.0,
                        rng.next_unit() * 4.0 + 0.01};
    std::vector<float> weights(static_cast<std::size_t>(top_k));
    for (auto& v : weights) v = static_cast<float>(rng.next_unit()) + 0.01f;
    const ExpertGroups groups = group_experts(weights);

    const auto counts =
        allocate_budget(top_k, d_ffn, s_active, groups, ratios);
    const long total = std::accumulate(counts.begin(), counts.end(), 0L);
    CHECK(total <= static_cast<long>(top_k) * d_ffn);

    // when no count hits the clamp, the rounding slack bound applies
    const double budget = s_active * top_k * d_ffn;
    const double denom = ratios.r0 * static_cast<double>(groups.g0.size()) +
                         ratios.r1 * static_cast<double>(groups.g1.size()) +
                         ratios.r2 * static_cast<double>(groups.g2.size());
    const double shares[3] = {budget * ratios.r0 / denom,
                              budget * ratios.r1 / denom,
                              budget * ratios.r2 / denom};
    bool clamped = false;
    for (double share : shares) {
      if (share > d_ffn || share < 0.0) clamped = true;
    }
    if (!clamped) {
      CHECK(std::fabs(static_cast<double>(total) - budget) <=
            top_k / 2.0 + 3.0);
    }
  }
}

TEST_CASE("allocate_budget is monotone in r0 for g0 members") {
  const std::vector<float> w = {0.5f, 0.25f, 0.13f, 0.07f, 0.03f, 0.02f};
  const ExpertGroups groups = group_experts(w);
  int last = -1;
  for (double r0 : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    const auto counts =
        allocate_budget(6, 32, 0.4, groups, BudgetRatios{r0, 1.0, 1.0});
    const int g0_count = counts[static_cast<std::size_t>(groups.g0[0])];
    CHECK(g0_count >= last);
    last = g0_count;
  }
}

TEST_CASE("apply_budget keep counts and hand case") {
  const std::vector<float> h = {1.0f, -3.0f, 2.0f};
  CHECK(apply_budget(h, 3) == std::vector<std::uint8_t>{1, 1, 1});
  CHECK(apply_budget(h, 0) == std::vector<std::uint8_t>{0, 0, 0});
  CHECK(apply_budget(h, 2) == std::vector<std::uint8_t>{0, 1, 1});
  CHECK_THROWS_AS(apply_budget(h, 4), ConfigError);
  CHECK_THROWS_AS(apply_budget(h, -1), ConfigError);
}

TEST_CASE("equal-ratio budget masks equal plain top-k masks bit for bit") {
  SplitMix64 rng(61);
  for (int trial = 0; trial < 100; ++trial) {
    const int d_ffn = (trial % 2 == 0) ? 8 : 16;
    const double s_active = (trial % 4 < 2) ? 0.5 : 0.25;
    std::vector<float> h(static_cast<std::size_t>(d_ffn));
    for (auto& v : h) v = rng.next_symmetric(1.0f);

    const int keep =
        static_cast<int>(std::floor(s_active * d_ffn + 0.5));
    const auto budget_mask = apply_budget(h, keep);
    const auto plain_mask = topk_mask(h, SparsityLevel(1.0 - s_active));
    CHECK(budget_mask == plain_mask);
  }
}
