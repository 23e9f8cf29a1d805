// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "sparsekit/router.hpp"
#include "sparsekit/rng.hpp"
#include "support.hpp"

using namespace sparsekit;
using testsupport::make_matrix;

TEST_CASE("route: symmetric tie breaks toward the lower expert id") {
  const Matrix logits = make_matrix(1, 2, {0.0f, 0.0f});
  const RouteResult r = route(logits, 2, true);
  CHECK(r.id(0, 0) == 0);
  CHECK(r.id(0, 1) == 1);
  CHECK(r.weight(0, 0) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(r.weight(0, 1) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("route: argmax with renormalization") {
  const Matrix logits = make_matrix(1, 3, {1.0f, 3.0f, 2.0f});
  const RouteResult r = route(logits, 1, true);
  CHECK(r.id(0, 0) == 1);
  CHECK(r.weight(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("route: hand softmax with renormalized pair") {
  const Matrix logits =
      make_matrix(1, 4, {0.0f, std::log(2.0f), 0.0f, 0.0f});
  const RouteResult r = route(logits, 2, true);
  CHECK(r.id(0, 0) == 1);
  CHECK(r.id(0, 1) == 0);  // 0.2 three-way tie resolved to the lowest id
  CHECK(r.weight(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-5));
  CHECK(r.weight(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-5));
}

TEST_CASE("route: top_k above expert count is a config error") {
  const Matrix logits(1, 2);
  CHECK_THROWS_AS(route(logits, 3, true), ConfigError);
}

TEST_CASE("route: without renormalization weights are raw softmax") {
  const Matrix logits = make_matrix(1, 4, {0.0f, std::log(2.0f), 0.0f, 0.0f});
  const RouteResult r = route(logits, 2, false);
  CHECK(r.weight(0, 0) == doctest::Approx(0.4).epsilon(1e-5));
  CHECK(r.weight(0, 1) == doctest::Approx(0.2).epsilon(1e-5));
}

TEST_CASE("align_dispatch: single token pads to the block size") {
  RouteResult r;
  r.batch = 1;
  r.top_k = 1;
  r.ids = {3};
  r.weights = {1.0f};
  const DispatchPlan plan = align_dispatch(r, 4, 4);
  CHECK(plan.sorted_token_slots ==
        std::vector<std::int32_t>{0, kPadIndex, kPadIndex, kPadIndex});
  CHECK(plan.expert_of_block == std::vector<std::int32_t>{3});
  CHECK(plan.n_padded == 4);
}

TEST_CASE("align_dispatch: one full block, no padding") {
  RouteResult r;
  r.batch = 2;
  r.top_k = 1;
  r.ids = {1, 1};
  r.weights = {1.0f, 1.0f};
  const DispatchPlan plan = align_dispatch(r, 4, 2);
  CHECK(plan.sorted_token_slots == std::vector<std::int32_t>{0, 1});
  CHECK(plan.expert_of_block == std::vector<std::int32_t>{1});
  CHECK(plan.n_padded == 2);
}

TEST_CASE("align_dispatch: permutation property over random routings") {
  SplitMix64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const int n_experts = 1 + static_cast<int>(rng.next_below(12));
    const int top_k =
        1 + static_cast<int>(rng.next_below(
                static_cast<std::uint64_t>(std::min(4, n_experts))));
    const int batch = 1 + static_cast<int>(rng.next_below(16));
    const int block = 1 + static_cast<int>(rng.next_below(8));

    Matrix logits(batch, n_experts);
    for (float& v : logits.data) v = rng.next_symmetric(2.0f);
    const RouteResult r = route(logits, top_k, true);

    // per-row ids distinct, weights positive and summing to one
    for (int t = 0; t < batch; ++t) {
      std::set<std::int32_t> seen;
      float sum = 0.0f;
      for (int s = 0; s < top_k; ++s) {
        seen.insert(r.id(t, s));
        CHECK(r.weight(t, s) > 0.0f);
        CHECK(r.weight(t, s) <= 1.0f);
        sum += r.weight(t, s);
      }
      CHECK(static_cast<int>(seen.size()) == top_k);
      CHECK(std::fabs(sum - 1.0f) <= 1e-5f);
    }

    const DispatchPlan plan = align_dispatch(r, n_experts, block);
    CHECK(plan.n_padded <= batch * top_k + n_experts * (block - 1));
    CHECK(plan.n_padded % block == 0);
    std::vector<std::int32_t> non_pad;
    for (std::size_t i = 0; i < plan.sorted_token_slots.size(); ++i) {
      const std::int32_t entry = plan.sorted_token_slots[i];
      if (entry == kPadIndex) continue;
      non_pad.push_back(entry);
      // every entry in a block routes to that block's expert
      const std::int32_t block_expert =
          plan.expert_of_block[i / static_cast<std::size_t>(block)];
      CHECK(r.ids[static_cast<std::size_t>(entry)] == block_expert);
    }
    std::sort(non_pad.begin(), non_pad.end());
    REQUIRE(static_cast<int>(non_pad.size()) == batch * top_k);
    for (int i = 0; i < batch * top_k; ++i) {
      CHECK(non_pad[static_cast<std::size_t>(i)] == i);
    }
  }
}

TEST_CASE("combine: single slot with unit weight passes through") {
  RouteResult r;
  r.batch = 1;
  r.top_k = 1;
  r.ids = {0};
  r.weights = {1.0f};
  const std::vector<float> outputs = {1.5f, -2.5f};
  const Matrix y = combine(outputs, r, 2);
  CHECK(y.at(0, 0) == 1.5f);
  CHECK(y.at(0, 1) == -2.5f);
}

TEST_CASE("combine: equal weights cancel opposite outputs") {
  RouteResult r;
  r.batch = 1;
  r.top_k = 2;
  r.ids = {0, 1};
  r.weights = {0.5f, 0.5f};
  const std::vector<float> outputs = {3.0f, -1.0f, -3.0f, 1.0f};
  const Matrix y = combine(outputs, r, 2);
  CHECK(y.at(0, 0) == 0.0f);
  CHECK(y.at(0, 1) == 0.0f);
}

TEST_CASE("combine: weighted hand arithmetic") {
  RouteResult r;
  r.batch = 1;
  r.top_k = 2;
  r.ids = {0, 1};
  r.weights = {2.0f / 3.0f, 1.0f / 3.0f};
  const std::vector<float> outputs = {3.0f, 0.0f, 0.0f, 3.0f};
  const Matrix y = combine(outputs, r, 2);
  CHECK(y.at(0, 0) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(y.at(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("combine: missing slot outputs are an internal error") {
  RouteResult r;
  r.batch = 1;
  r.top_k = 2;
  r.ids = {0, 1};
  r.weights = {0.5f, 0.5f};
  const std::vector<float> short_outputs(2, 0.0f);
  CHECK_THROWS_AS(combine(short_outputs, r, 2), InternalError);
}
