// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace sparsekit {

RouteResult route(const Matrix& logits, int top_k, bool renormalize) {
  const int batch = logits.rows;
  const int n_experts = logits.cols;
  if (batch < 1) {
    throw ShapeError("route: empty batch");
  }
  if (top_k < 1 || top_k > n_experts) {
    throw ConfigError("route: top_k=" + std::to_string(top_k) +
                      " outside [1, " + std::to_string(n_experts) + "]");
  }

  RouteResult r;
  r.batch = batch;
  r.top_k = top_k;
  r.ids.resize(static_cast<std::size_t>(batch) * top_k);
  r.weights.resize(static_cast<std::size_t>(batch) * top_k);

  std::vector<float> probs(static_cast<std::size_t>(n_experts));
  std::vector<int> order(static_cast<std::size_t>(n_experts));

  for (int t = 0; t < batch; ++t) {
    const auto row = logits.row(t);

    // softmax with max subtraction
    float mx = row[0];
    for (int e = 1; e < n_experts; ++e) mx = std::max(mx, row[e]);
    float denom = 0.0f;
    for (int e = 0; e < n_experts; ++e) {
      probs[static_cast<std::size_t>(e)] = std::exp(row[e] - mx);
      denom += probs[static_cast<std::size_t>(e)];
    }
    for (int e = 0; e < n_experts; ++e) {
      probs[static_cast<std::size_t>(e)] /= denom;
    }

    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + top_k, order.end(),
                      [&](int a, int b) {
                        const float pa = probs[static_cast<std::size_t>(a)];
                        const float pb = probs[static_cast<std::size_t>(b)];
                        return pa > pb || (pa == pb && a < b);
                      });

    float selected_sum = 0.0f;
    for (int s = 0; s < top_k; ++s) {
      selected_sum += probs[static_cast<std::size_t>(order[s])];
    }
    for (int s = 0; s < top_k; ++s) {
      const std::size_t at = static_cast<std::size_t>(t) * top_k + s;
      r.ids[at] = static_cast<std::int32_t>(order[s]);
      const float p = probs[static_cast<std::size_t>(order[s])];
      r.weights[at] = renormalize ? p / selected_sum : p;
    }
  }
  return r;
}

DispatchPlan align_dispatch(const RouteResult& route, int n_experts,
                            int block) {
  if (block < 1) {
    throw ConfigError("align_dispatch: block must be >= 1");
  }

  std::vector<std::vector<std::int32_t>> buckets(
      static_cast<std::size_t>(n_experts));
  const std::int32_t flat_count =
      static_cast<std::int32_t>(route.batch) * route.top_k;
  for (std::int32_t i = 0; i < flat_count; ++i) {
    const std::int32_t e = route.ids[static_cast<std::size_t>(i)];
    if (e < 0 || e >= n_experts) {
      throw IndexError("align_dispatch: expert id " + std::to_string(e) +
                       " outside [0, " + std::to_string(n_experts) + ")");
    }
    buckets[static_cast<std::size_t>(e)].push_back(i);
  }

  DispatchPlan plan;
  plan.block_size = block;
  for (int e = 0; e < n_experts; ++e) {
    const auto& bucket = buckets[static_cast<std::size_t>(e)];
    if (bucket.empty()) continue;
    const std::size_t padded =
        (bucket.size() + block - 1) / block * static_cast<std::size_t>(block);
    plan.sorted_token_slots.insert(plan.sorted_token_slots.end(),
                                   bucket.begin(), bucket.end());
    plan.sorted_token_slots.resize(plan.sorted_token_slots.size() +
                                       (padded - bucket.size()),
                                   kPadIndex);
    for (std::size_t b = 0; b < padded / block; ++b) {
      plan.expert_of_block.push_back(e);
    }
  }
  plan.n_padded = static_cast<int>(plan.sorted_token_slots.size());
  return plan;
}

Matrix combine(std::span<const float> slot_outputs, const RouteResult& route,
               int d_model) {
  const std::size_t expected = static_cast<std::size_t>(route.batch) *
                               route.top_k * static_cast<std::size_t>(d_model);
  if (slot_outputs.size() != expected) {
    throw InternalError("combine: got " + std::to_string(slot_outputs.size()) +
                        " values, expected " + std::to_string(expected));
  }

  Matrix y(route.batch, d_model);
  for (int t = 0; t < route.batch; ++t) {
    auto dst = y.row(t);
    for (int s = 0; s < route.top_k; ++s) {
      const float w = route.weight(t, s);
      const float* src =
          slot_outputs.data() +
          (static_cast<std::size_t>(t) * route.top_k + s) * d_model;
      for (int d = 0; d < d_model; ++d) {
        dst[d] += w * src[d];
      }
    }
  }
  return y;
}

}  // namespace sparsekit
