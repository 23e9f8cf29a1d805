// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sparsekit/linalg.hpp"

namespace sparsekit {

// Architectural shape of one MoE layer.
struct MoEConfig {
  int n_experts = 1;  // E
  int top_k = 1;      // K, active routed experts per token
  int d_model = 1;    // D
  int d_ffn = 1;      // N, per-expert FFN width
  bool has_shared = false;
  int d_shared = 0;  // shared-expert FFN width, 0 when absent
  bool renormalize = true;
  int align_block = 64;  // M, dispatch padding granularity

  // Neuron tile granularity of the sparse execution path; fixed.
  static constexpr int kTile = 64;

  void validate() const;  // throws ConfigError
};

// Router plus per-expert SwiGLU weights. The down projection is stored
// transposed (N x D rather than D x N) so the sparse path can gather
// per-neuron weight rows directly.
struct MoELayerWeights {
  MoEConfig config;
  Matrix router;               // E x D
  std::vector<Matrix> gate;    // E matrices, each N x D
  std::vector<Matrix> up;      // E matrices, each N x D
  std::vector<Matrix> down_t;  // E matrices, each N x D (transposed storage)
  Matrix shared_gate;          // d_shared x D when has_shared
  Matrix shared_up;
  Matrix shared_down_t;
};

// Deterministic synthetic weights: every entry i.i.d. uniform in
// [-scale, +scale) from SplitMix64(seed). Fill order matches the file
// format: router, then per expert gate/up/down_t, then shared matrices.
// Same (config, seed, scale) always yields identical bytes.
MoELayerWeights generate_synthetic(const MoEConfig& config, std::uint64_t seed,
                                   float scale);

// Seeded standard-normal token batch (batch x d_model).
Matrix generate_tokens(int batch, int d_model, std::uint64_t seed);

// Weight file, little-endian: magic "MOE1"; u32 E, K, D, N, d_shared,
// flags (bit0 = has_shared, bit1 = renormalize); router matrix; per expert
// gate, up, down_t; shared gate/up/down_t when present. Matrices are raw
// fp32 row-major with no padding.
void save_weights(const MoELayerWeights& w, const std::filesystem::path& path);
MoELayerWeights load_weights(const std::filesystem::path& path);

// Exact on-disk size in bytes for a given shape.
std::uint64_t weight_file_size(const MoEConfig& config);

}  // namespace sparsekit
