// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sparsekit/linalg.hpp"

namespace sparsekit {

// Index-buffer padding value used by dispatch plans and active-index rows.
inline constexpr std::int32_t kPadIndex = -1;

// Per-token routing decision: expert ids sorted by descending weight
// (ties resolved toward the lower expert id), weights renormalized to sum
// to one when requested.
struct RouteResult {
  int batch = 0;
  int top_k = 0;
  std::vector<std::int32_t> ids;  // batch * top_k
  std::vector<float> weights;     // batch * top_k

  std::int32_t id(int t, int s) const {
    return ids[static_cast<std::size_t>(t) * top_k + s];
  }
  float weight(int t, int s) const {
    return weights[static_cast<std::size_t>(t) * top_k + s];
  }
};

RouteResult route(const Matrix& logits, int top_k, bool renormalize);

// Token-slot indices (t * K + s) grouped contiguously by expert id
// ascending, each expert's group padded with kPadIndex to a multiple of the
// block size. Experts that receive no tokens get no block.
struct DispatchPlan {
  std::vector<std::int32_t> sorted_token_slots;
  std::vector<std::int32_t> expert_of_block;  // one entry per block
  int block_size = 0;
  int n_padded = 0;  // == sorted_token_slots.size()
};

DispatchPlan align_dispatch(const RouteResult& route, int n_experts,
                            int block);

// Weighted combine of per-(token, slot) expert outputs:
// y[t] = sum_s weight(t, s) * outputs[t, s], slots ascending.
// `slot_outputs` holds batch * top_k vectors of length d_model.
Matrix combine(std::span<const float> slot_outputs, const RouteResult& route,
               int d_model);

}  // namespace sparsekit
