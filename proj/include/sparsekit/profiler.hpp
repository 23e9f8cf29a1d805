// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sparsekit/activation.hpp"
#include "sparsekit/engine.hpp"
#include "sparsekit/model.hpp"

namespace sparsekit {

// Histogram of SwiGLU outputs plus per-neuron survivor counts for one
// expert. Bin k covers [(k - 0.5) * bin_width, (k + 0.5) * bin_width), so
// bin 0 straddles zero. Counting convention: every token is pushed through
// the profiled expert exactly once, so total_events = tokens * d_ffn.
struct ActivationProfile {
  double bin_width = 0.006;
  std::map<std::int64_t, std::uint64_t> bins;
  std::vector<std::int64_t> per_neuron_counts;
  std::uint64_t total_events = 0;
  int never_activated = 0;
};

ActivationProfile profile_expert(const MoELayerWeights& w, int expert_id,
                                 const Matrix& tokens, SparsityLevel s,
                                 double bin_width = 0.006);

// R applies analysis masks to routed experts only; R+S masks the shared
// expert as well.
enum class SweepMode { kRoutedOnly, kRoutedAndShared };

// Pluggable scorer mapping (outputs, dense outputs) to a quality value.
using QualityMetric =
    std::function<double(const Matrix& outputs, const Matrix& dense_outputs)>;

// Default quality basis: mean over tokens of ||y - y_dense||_2 /
// ||y_dense||_2, tokens with ||y_dense||_2 < 1e-12 excluded.
double mean_relative_error(const Matrix& outputs, const Matrix& dense_outputs);

struct SweepPoint {
  double target = 0.0;
  double achieved_total = 0.0;
  double achieved_routed = 0.0;
  double quality = 0.0;
  double rel_error = 0.0;
  std::string path;  // execution mode label, "R" or "R+S"
};

struct SweepResult {
  std::vector<SweepPoint> points;  // one per target, ascending
  double cutoff = 0.0;  // largest target retaining the quality floor, else 0
};

// Masked-dense sweep over the targets. Quality per point comes from
// `metric` (default: 1 - mean_relative_error); the cutoff is the largest
// target whose quality is at least retention * quality(target 0).
SweepResult sweep_cutoff(const MoELayerWeights& w, const Matrix& eval_tokens,
                         std::span<const double> targets, double retention,
                         SweepMode mode, const QualityMetric& metric = {});

// Analysis masks for one sparsity level: per-slot top-k masks on the full
// SwiGLU output, plus shared-expert masks in R+S mode.
MaskSet build_topk_masks(const MoELayerWeights& w, const Matrix& tokens,
                         SparsityLevel s, SweepMode mode);

// CSV with header "target,achieved_total,achieved_routed,quality,rel_error,
// path", 9 significant digits, and a trailing "# cutoff=<v>" comment when
// any points exist.
void emit_report(const SweepResult& result, const std::filesystem::path& path);
SweepResult read_report(const std::filesystem::path& path);

// "bin_center\tcount" lines, bins ascending.
void emit_histogram(const ActivationProfile& profile,
                    const std::filesystem::path& path);

}  // namespace sparsekit
