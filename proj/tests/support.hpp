// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers. scalar_forward is the independent reference: naive
// per-token, per-expert, per-neuron triple loops with double accumulators,
// no dispatch plan, no gathers. It must stay independent of the engine.

#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "sparsekit/engine.hpp"
#include "sparsekit/model.hpp"
#include "sparsekit/rng.hpp"

namespace testsupport {

using sparsekit::Matrix;
using sparsekit::MaskSet;
using sparsekit::MoEConfig;
using sparsekit::MoELayerWeights;
using sparsekit::SplitMix64;

inline double max_rel_diff(const Matrix& a, const Matrix& b) {
  double max_abs_diff = 0.0;
  double max_abs_ref = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    max_abs_diff = std::max(
        max_abs_diff, std::fabs(static_cast<double>(a.data[i]) - b.data[i]));
    max_abs_ref =
        std::max(max_abs_ref, std::fabs(static_cast<double>(b.data[i])));
  }
  return max_abs_diff / std::max(1.0, max_abs_ref);
}

inline Matrix make_matrix(int rows, int cols, std::initializer_list<float> v) {
  Matrix m(rows, cols);
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}

inline double silu_ref(double x) { return x / (1.0 + std::exp(-x)); }

// Reference forward. Routing probabilities are computed in float with the
// same stabilized softmax so expert selection agrees; everything past the
// router runs in double through plain triple loops.
inline Matrix scalar_forward(const MoELayerWeights& w, const Matrix& x,
                             const MaskSet* masks = nullptr) {
  const MoEConfig& cfg = w.config;
  Matrix y(x.rows, cfg.d_model);

  std::vector<float> probs(static_cast<std::size_t>(cfg.n_experts));
  for (int t = 0; t < x.rows; ++t) {
    const auto x_t = x.row(t);

    for (int e = 0; e < cfg.n_experts; ++e) {
      float acc = 0.0f;
      for (int d = 0; d < cfg.d_model; ++d) {
        acc += w.router.at(e, d) * x_t[d];
      }
      probs[static_cast<std::size_t>(e)] = acc;
    }
    float mx = probs[0];
    for (float p : probs) mx = std::max(mx, p);
    float denom = 0.0f;
    for (float& p : probs) {
      p = std::exp(p - mx);
      denom += p;
    }
    for (float& p : probs) p /= denom;

    std::vector<int> order(static_cast<std::size_t>(cfg.n_experts));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const float pa = probs[static_cast<std::size_t>(a)];
      const float pb = probs[static_cast<std::size_t>(b)];
      return pa > pb || (pa == pb && a < b);
    });

    std::vector<double> weights(static_cast<std::size_t>(cfg.top_k));
    double selected = 0.0;
    for (int s = 0; s < cfg.top_k; ++s) {
      weights[static_cast<std::size_t>(s)] =
          probs[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])];
      selected += weights[static_cast<std::size_t>(s)];
    }
    if (cfg.renormalize) {
      for (double& wgt : weights) wgt /= selected;
    }

    std::vector<double> acc(static_cast<std::size_t>(cfg.d_model), 0.0);
    for (int s = 0; s < cfg.top_k; ++s) {
      const int e = order[static_cast<std::size_t>(s)];
      const Matrix& gate_w = w.gate[static_cast<std::size_t>(e)];
      const Matrix& up_w = w.up[static_cast<std::size_t>(e)];
      const Matrix& down_w = w.down_t[static_cast<std::size_t>(e)];
      for (int n = 0; n < cfg.d_ffn; ++n) {
        double g = 0.0;
        double u = 0.0;
        for (int d = 0; d < cfg.d_model; ++d) {
          g += static_cast<double>(gate_w.at(n, d)) * x_t[d];
          u += static_cast<double>(up_w.at(n, d)) * x_t[d];
        }
        double h = silu_ref(g) * u;
        if (masks != nullptr) {
          const std::size_t at =
              (static_cast<std::size_t>(t) * cfg.top_k + s) * cfg.d_ffn + n;
          if (!masks->routed[at]) h = 0.0;
        }
        const double wh = weights[static_cast<std::size_t>(s)] * h;
        for (int d = 0; d < cfg.d_model; ++d) {
          acc[static_cast<std::size_t>(d)] +=
              wh * static_cast<double>(down_w.at(n, d));
        }
      }
    }

    if (cfg.has_shared) {
      for (int n = 0; n < cfg.d_shared; ++n) {
        double g = 0.0;
        double u = 0.0;
        for (int d = 0; d < cfg.d_model; ++d) {
          g += static_cast<double>(w.shared_gate.at(n, d)) * x_t[d];
          u += static_cast<double>(w.shared_up.at(n, d)) * x_t[d];
        }
        double h = silu_ref(g) * u;
        if (masks != nullptr && !masks->shared.empty()) {
          const std::size_t at =
              static_cast<std::size_t>(t) * cfg.d_shared + n;
          if (!masks->shared[at]) h = 0.0;
        }
        for (int d = 0; d < cfg.d_model; ++d) {
          acc[static_cast<std::size_t>(d)] +=
              h * static_cast<double>(w.shared_down_t.at(n, d));
        }
      }
    }

    for (int d = 0; d < cfg.d_model; ++d) {
      y.at(t, d) = static_cast<float>(acc[static_cast<std::size_t>(d)]);
    }
  }
  return y;
}

inline MoEConfig random_config(SplitMix64& rng, bool allow_shared = true) {
  MoEConfig cfg;
  cfg.n_experts = 1 + static_cast<int>(rng.next_below(16));
  cfg.top_k = 1 + static_cast<int>(rng.next_below(
                      static_cast<std::uint64_t>(std::min(4, cfg.n_experts))));
  cfg.d_model = 1 + static_cast<int>(rng.next_below(64));
  cfg.d_ffn = 1 + static_cast<int>(rng.next_below(128));
  if (allow_shared && rng.next_below(2) == 0) {
    cfg.has_shared = true;
    cfg.d_shared = 1 + static_cast<int>(rng.next_below(32));
  }
  cfg.renormalize = rng.next_below(2) == 0;
  return cfg;
}

// Threshold masks built from the gate projections through the public API;
// the masked-dense oracle consumes these.
inline MaskSet threshold_masks(const MoELayerWeights& w, const Matrix& tokens,
                               float threshold);

inline std::filesystem::path fresh_temp_dir(const std::string& tag) {
  static SplitMix64 rng(0x7e57d19ull ^ static_cast<std::uint64_t>(getpid()));
  const auto dir = std::filesystem::temp_directory_path() /
                   ("sparsekit_" + tag + "_" + std::to_string(rng.next()));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport

#include "sparsekit/activation.hpp"
#include "sparsekit/linalg.hpp"
#include "sparsekit/router.hpp"

namespace testsupport {

inline MaskSet threshold_masks(const MoELayerWeights& w, const Matrix& tokens,
                               float threshold) {
  const MoEConfig& cfg = w.config;
  std::uint64_t scratch = 0;
  Matrix logits(tokens.rows, cfg.n_experts);
  for (int t = 0; t < tokens.rows; ++t) {
    const auto row = sparsekit::matvec(w.router, tokens.row(t), scratch);
    std::copy(row.begin(), row.end(), logits.row(t).begin());
  }
  const auto routes =
      sparsekit::route(logits, cfg.top_k, cfg.renormalize);

  MaskSet masks;
  masks.routed.resize(static_cast<std::size_t>(tokens.rows) * cfg.top_k *
                      static_cast<std::size_t>(cfg.d_ffn));
  for (int t = 0; t < tokens.rows; ++t) {
    for (int s = 0; s < cfg.top_k; ++s) {
      const int e = routes.id(t, s);
      const auto gate_out = sparsekit::matvec(
          w.gate[static_cast<std::size_t>(e)], tokens.row(t), scratch);
      const auto mask = sparsekit::threshold_mask(gate_out, threshold);
      std::copy(mask.begin(), mask.end(),
                masks.routed.begin() +
                    (static_cast<std::size_t>(t) * cfg.top_k + s) *
                        cfg.d_ffn);
    }
  }
  return masks;
}

}  // namespace testsupport
