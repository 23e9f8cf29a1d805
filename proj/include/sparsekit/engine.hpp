// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "sparsekit/model.hpp"

namespace sparsekit {

enum class ExecPath { kDense, kSparse };

// Outcome of one forward step: outputs plus the measurable accounting the
// execution paths are checked against.
struct ForwardReport {
  Matrix outputs;  // B x d_model
  MacCounter macs;
  std::uint64_t active_neurons_total = 0;  // routed survivors across batch
  double achieved_routed_sparsity = 0.0;
  std::uint64_t tiles_total = 0;
  std::uint64_t tiles_skipped = 0;
  ExecPath path_used = ExecPath::kDense;
};

// Analysis-mode masks: routed is B * K * d_ffn slot-major per token; shared
// is B * d_shared, or empty to leave the shared expert dense.
struct MaskSet {
  std::vector<std::uint8_t> routed;
  std::vector<std::uint8_t> shared;
};

// Reference path: full SwiGLU for every routed slot via expert-major
// grouped execution, weighted combine, then the shared expert.
ForwardReport forward_dense(const MoELayerWeights& w, const Matrix& x,
                            int threads = 1);

// Dense execution with h zeroed where masked before the down projection.
// Charges full dense MACs: the analysis mode measures quality, not compute.
ForwardReport forward_masked_dense(const MoELayerWeights& w, const Matrix& x,
                                   const MaskSet& masks, int threads = 1);

// Gather-based sparse path: dense gate projection, single-pass threshold
// masking on |silu(gate)|, compaction into the padded index buffer, then a
// fused up-down stage over fixed 64-neuron tiles with early exit on
// all-padding tiles. Up/down MACs are charged per full tile.
ForwardReport forward_sparse(const MoELayerWeights& w, const Matrix& x,
                             float threshold, int threads = 1);

// Batch-size switch point. Batches of at least tipping_batch take the
// dense path; kSparseAlways means the sparse path is never beaten.
struct SwitchTable {
  static constexpr std::size_t kSparseAlways =
      std::numeric_limits<std::size_t>::max();

  std::size_t tipping_batch = kSparseAlways;

  bool use_dense(std::size_t batch) const { return batch >= tipping_batch; }
};

// Injectable monotonic clock so switch profiling is testable with scripted
// timings.
class Stopwatch {
 public:
  virtual ~Stopwatch() = default;
  virtual double now_ms() = 0;
};

class SteadyStopwatch final : public Stopwatch {
 public:
  double now_ms() override;
};

// Time both paths over the batch grid and return the smallest batch size
// whose dense median is at or below the sparse median, else kSparseAlways.
// Call order per batch size: `repetitions` sparse runs then `repetitions`
// dense runs, with one now_ms() before and one after each run.
SwitchTable profile_tipping(const MoELayerWeights& w, float threshold,
                            std::span<const int> batch_grid,
                            int repetitions = 5, Stopwatch* clock = nullptr,
                            std::uint64_t token_seed = 0);

// forward_dense when the switch table says so for this batch size,
// forward_sparse otherwise.
ForwardReport step(const MoELayerWeights& w, const Matrix& x, float threshold,
                   const SwitchTable& table, int threads = 1);

// Tile arithmetic for one token at the fixed 64-neuron granularity.
std::uint64_t tiles_per_token(int capacity);
std::uint64_t tiles_executed(std::int32_t total_active);

}  // namespace sparsekit
