// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sparsekit/model.hpp"

namespace sparsekit {

// Monotone mapping from target total activation sparsity to the masking
// threshold used by the runtime path.
struct CalibrationTable {
  struct Entry {
    double target = 0.0;     // total activation sparsity in [0, 1)
    double threshold = 0.0;  // tau >= 0
  };
  std::vector<Entry> entries;  // targets strictly increasing,
                               // thresholds non-decreasing
};

// Convert a total-activation sparsity target into the routed-expert
// sparsity that produces it once the (never masked) shared expert is
// accounted for: min(1, s_total * (K*N + d_shared) / (K*N)).
double total_to_routed(double s_total, int top_k, int d_ffn, int d_shared);

// Inverse accounting: the total sparsity produced by masking the routed
// experts at s_routed while the shared expert stays dense.
double routed_to_total(double s_routed, int top_k, int d_ffn, int d_shared);

// Run the calibration tokens through the router and record
// |silu(gate_out[i])| for every neuron of every routed slot, reservoir
// sampled down to sample_cap (seeded, deterministic). Returned ascending.
std::vector<float> collect_magnitudes(const MoELayerWeights& w,
                                      const Matrix& tokens,
                                      std::size_t sample_cap,
                                      std::uint64_t seed);

// Nearest-rank upper-quantile table: for each target,
// tau = sample[min(n-1, ceil(s_routed * n))], and tau = 0 when the routed
// target is zero so a zero target masks nothing.
CalibrationTable build_table(std::span<const float> sorted_magnitudes,
                             std::span<const double> targets, int top_k,
                             int d_ffn, int d_shared);

// Stored value on exact match, linear interpolation between bracketing
// entries otherwise, clamped to the nearest entry outside the range.
double lookup(const CalibrationTable& table, double target);

// Table file: header line "# moe-sparsekit calib v1", then one
// "<target>\t<threshold>\n" line per entry, 9 significant digits.
void save_table(const CalibrationTable& table,
                const std::filesystem::path& path);
CalibrationTable load_table(const std::filesystem::path& path);

}  // namespace sparsekit
