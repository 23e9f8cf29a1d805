// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <thread>

#include "sparsekit/activation.hpp"
#include "sparsekit/router.hpp"

namespace sparsekit {

namespace {

// Runs fn(begin, end, worker) over contiguous chunks of [0, n). Workers
// write to disjoint outputs and keep private counters, so results are
// independent of the worker count.
template <typename Fn>
void parallel_chunks(int n, int threads, const Fn& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1 || n <= 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads) - 1);
  const int chunk = (n + threads - 1) / threads;
  for (int worker = 1; worker < threads; ++worker) {
    const int begin = worker * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end, worker] { fn(begin, end, worker); });
  }
  fn(0, std::min(n, chunk), 0);
  for (auto& th : pool) th.join();
}

Matrix route_logits(const MoELayerWeights& w, const Matrix& x, int threads,
                    std::vector<MacCounter>& counters) {
  Matrix logits(x.rows, w.config.n_experts);
  parallel_chunks(x.rows, threads, [&](int begin, int end, int worker) {
    for (int t = begin; t < end; ++t) {
      const auto row = matvec(w.router, x.row(t), counters[worker].other_macs);
      std::copy(row.begin(), row.end(), logits.row(t).begin());
    }
  });
  return logits;
}

void add_shared_expert(const MoELayerWeights& w, const Matrix& x,
                       const std::vector<std::uint8_t>* shared_masks,
                       int threads, Matrix& y,
                       std::vector<MacCounter>& counters) {
  if (!w.config.has_shared) return;
  const int d_shared = w.config.d_shared;
  std::vector<std::int32_t> all_idx(static_cast<std::size_t>(d_shared));
  std::iota(all_idx.begin(), all_idx.end(), 0);

  parallel_chunks(x.rows, threads, [&](int begin, int end, int worker) {
    std::uint64_t& macs = counters[worker].other_macs;
    for (int t = begin; t < end; ++t) {
      const auto gate_out = matvec(w.shared_gate, x.row(t), macs);
      const auto up_out = matvec(w.shared_up, x.row(t), macs);
      auto h = swiglu_rows(gate_out, up_out);
      if (shared_masks != nullptr) {
        const std::uint8_t* m =
            shared_masks->data() + static_cast<std::size_t>(t) * d_shared;
        for (int i = 0; i < d_shared; ++i) {
          if (!m[i]) h[static_cast<std::size_t>(i)] = 0.0f;
        }
      }
      const auto contrib = gathered_matvec_t(w.shared_down_t, all_idx, h, macs);
      auto dst = y.row(t);
      for (int d = 0; d < w.config.d_model; ++d) {
        dst[d] += contrib[static_cast<std::size_t>(d)];
      }
    }
  });
}

MacCounter merge_counters(const std::vector<MacCounter>& counters) {
  MacCounter total;
  for (const auto& c : counters) total += c;
  return total;
}

// Dense and masked-dense share one body; masked execution only zeroes h
// before the down projection.
ForwardReport forward_dense_impl(const MoELayerWeights& w, const Matrix& x,
                                 const MaskSet* masks, int threads) {
  const MoEConfig& cfg = w.config;
  cfg.validate();
  if (x.cols != cfg.d_model) {
    throw ShapeError("forward: tokens are B x " + std::to_string(x.cols) +
                     ", model expects d_model=" + std::to_string(cfg.d_model));
  }
  const int batch = x.rows;
  const int top_k = cfg.top_k;
  const int d_ffn = cfg.d_ffn;
  const std::size_t routed_mask_size = static_cast<std::size_t>(batch) *
                                       top_k *
                                       static_cast<std::size_t>(d_ffn);
  if (masks != nullptr) {
    if (masks->routed.size() != routed_mask_size) {
      throw ShapeError("forward_masked_dense: routed masks must be B*K*d_ffn");
    }
    if (!masks->shared.empty() &&
        masks->shared.size() != static_cast<std::size_t>(batch) *
                                    static_cast<std::size_t>(cfg.d_shared)) {
      throw ShapeError("forward_masked_dense: shared masks must be B*d_shared");
    }
  }

  std::vector<MacCounter> counters(
      static_cast<std::size_t>(std::max(1, threads)));
  const Matrix logits = route_logits(w, x, threads, counters);
  const RouteResult routes = route(logits, top_k, cfg.renormalize);
  const DispatchPlan plan =
      align_dispatch(routes, cfg.n_experts, cfg.align_block);

  std::vector<std::int32_t> all_idx(static_cast<std::size_t>(d_ffn));
  std::iota(all_idx.begin(), all_idx.end(), 0);

  std::vector<float> slot_outputs(routed_mask_size / d_ffn *
                                  static_cast<std::size_t>(cfg.d_model));
  const int n_blocks = static_cast<int>(plan.expert_of_block.size());
  parallel_chunks(n_blocks, threads, [&](int begin, int end, int worker) {
    MacCounter& macs = counters[worker];
    for (int b = begin; b < end; ++b) {
      const int e = plan.expert_of_block[static_cast<std::size_t>(b)];
      const Matrix& gate_w = w.gate[static_cast<std::size_t>(e)];
      const Matrix& up_w = w.up[static_cast<std::size_t>(e)];
      const Matrix& down_w = w.down_t[static_cast<std::size_t>(e)];
      for (int i = 0; i < plan.block_size; ++i) {
        const std::int32_t entry =
            plan.sorted_token_slots[static_cast<std::size_t>(b) *
                                        plan.block_size +
                                    i];
        if (entry == kPadIndex) continue;
        const int t = entry / top_k;
        const int s = entry % top_k;
        const auto gate_out = matvec(gate_w, x.row(t), macs.gate_macs);
        const auto up_out = matvec(up_w, x.row(t), macs.up_macs);
        auto h = swiglu_rows(gate_out, up_out);
        if (masks != nullptr) {
          const std::uint8_t* m =
              masks->routed.data() +
              (static_cast<std::size_t>(t) * top_k + s) * d_ffn;
          for (int n = 0; n < d_ffn; ++n) {
            if (!m[n]) h[static_cast<std::size_t>(n)] = 0.0f;
          }
        }
        const auto out = gathered_matvec_t(down_w, all_idx, h, macs.down_macs);
        std::copy(out.begin(), out.end(),
                  slot_outputs.begin() +
                      (static_cast<std::size_t>(t) * top_k + s) *
                          cfg.d_model);
      }
    }
  });

  ForwardReport report;
  report.outputs = combine(slot_outputs, routes, cfg.d_model);
  add_shared_expert(w, x,
                    (masks != nullptr && !masks->shared.empty())
                        ? &masks->shared
                        : nullptr,
                    threads, report.outputs, counters);

  const std::uint64_t routed_neurons =
      static_cast<std::uint64_t>(batch) * top_k *
      static_cast<std::uint64_t>(d_ffn);
  if (masks != nullptr) {
    std::uint64_t active = 0;
    for (std::uint8_t m : masks->routed) active += m ? 1 : 0;
    report.active_neurons_total = active;
  } else {
    report.active_neurons_total = routed_neurons;
  }
  report.achieved_routed_sparsity =
      1.0 - static_cast<double>(report.active_neurons_total) /
                static_cast<double>(routed_neurons);
  report.macs = merge_counters(counters);
  report.path_used = ExecPath::kDense;
  return report;
}

double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

double SteadyStopwatch::now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(
             clock::now().time_since_epoch())
      .count();
}

std::uint64_t tiles_per_token(int capacity) {
  return (static_cast<std::uint64_t>(capacity) + MoEConfig::kTile - 1) /
         MoEConfig::kTile;
}

std::uint64_t tiles_executed(std::int32_t total_active) {
  return (static_cast<std::uint64_t>(total_active) + MoEConfig::kTile - 1) /
         MoEConfig::kTile;
}

ForwardReport forward_dense(const MoELayerWeights& w, const Matrix& x,
                            int threads) {
  return forward_dense_impl(w, x, nullptr, threads);
}

ForwardReport forward_masked_dense(const MoELayerWeights& w, const Matrix& x,
                                   const MaskSet& masks, int threads) {
  return forward_dense_impl(w, x, &masks, threads);
}

ForwardReport forward_sparse(const MoELayerWeights& w, const Matrix& x,
                             float threshold, int threads) {
  const MoEConfig& cfg = w.config;
  cfg.validate();
  if (x.cols != cfg.d_model) {
    throw ShapeError("forward_sparse: tokens are B x " +
                     std::to_string(x.cols) + ", model expects d_model=" +
                     std::to_string(cfg.d_model));
  }
  if (!(threshold >= 0.0f)) {
    throw ConfigError("forward_sparse: threshold must be >= 0");
  }

  const int batch = x.rows;
  const int top_k = cfg.top_k;
  const int d_ffn = cfg.d_ffn;
  const int d_model = cfg.d_model;
  const int capacity = default_capacity(top_k, d_ffn);
  const std::uint64_t token_tiles = tiles_per_token(capacity);

  std::vector<MacCounter> counters(
      static_cast<std::size_t>(std::max(1, threads)));
  const Matrix logits = route_logits(w, x, threads, counters);
  const RouteResult routes = route(logits, top_k, cfg.renormalize);

  // Stage 1: dense gate projection for every routed slot, expert-major via
  // the dispatch plan, exactly as the dense path computes it.
  const DispatchPlan plan =
      align_dispatch(routes, cfg.n_experts, cfg.align_block);
  std::vector<float> gate_raw(static_cast<std::size_t>(batch) * top_k *
                              static_cast<std::size_t>(d_ffn));
  const int n_blocks = static_cast<int>(plan.expert_of_block.size());
  parallel_chunks(n_blocks, threads, [&](int begin, int end, int worker) {
    MacCounter& macs = counters[worker];
    for (int b = begin; b < end; ++b) {
      const int e = plan.expert_of_block[static_cast<std::size_t>(b)];
      const Matrix& gate_w = w.gate[static_cast<std::size_t>(e)];
      for (int i = 0; i < plan.block_size; ++i) {
        const std::int32_t entry =
            plan.sorted_token_slots[static_cast<std::size_t>(b) *
                                        plan.block_size +
                                    i];
        if (entry == kPadIndex) continue;
        const int t = entry / top_k;
        const int s = entry % top_k;
        const auto out = matvec(gate_w, x.row(t), macs.gate_macs);
        std::copy(out.begin(), out.end(),
                  gate_raw.begin() +
                      (static_cast<std::size_t>(t) * top_k + s) * d_ffn);
      }
    }
  });

  // Stage 2+3: per token, threshold mask + compaction, then the fused
  // up-down stage in fixed 64-neuron tiles with early exit.
  ForwardReport report;
  report.outputs = Matrix(batch, d_model);
  std::vector<std::uint64_t> worker_active(counters.size(), 0);
  std::vector<std::uint64_t> worker_skipped(counters.size(), 0);

  parallel_chunks(batch, threads, [&](int begin, int end, int worker) {
    MacCounter& macs = counters[worker];
    std::vector<std::uint8_t> masks(static_cast<std::size_t>(top_k) * d_ffn);
    std::vector<std::int32_t> slot_ids(static_cast<std::size_t>(top_k));
    std::vector<float> partial(static_cast<std::size_t>(d_model));

    for (int t = begin; t < end; ++t) {
      const auto x_t = x.row(t);
      for (int s = 0; s < top_k; ++s) {
        slot_ids[static_cast<std::size_t>(s)] = routes.id(t, s);
        const float* g =
            gate_raw.data() + (static_cast<std::size_t>(t) * top_k + s) * d_ffn;
        const auto slot_mask = threshold_mask({g, static_cast<std::size_t>(d_ffn)}, threshold);
        std::copy(slot_mask.begin(), slot_mask.end(),
                  masks.begin() + static_cast<std::size_t>(s) * d_ffn);
      }
      const ActiveIndexRow row =
          compact_active(masks, slot_ids, d_ffn, capacity);

      auto y_t = report.outputs.row(t);
      for (std::uint64_t tile = 0; tile < token_tiles; ++tile) {
        const std::int32_t tile_start =
            static_cast<std::int32_t>(tile) * MoEConfig::kTile;
        if (tile_start >= row.total_active) continue;  // early exit

        std::fill(partial.begin(), partial.end(), 0.0f);
        const std::int32_t tile_end = std::min<std::int32_t>(
            tile_start + MoEConfig::kTile, capacity);
        for (std::int32_t k = tile_start; k < tile_end; ++k) {
          if (k >= row.total_active) break;
          const std::int32_t fr = row.flat[static_cast<std::size_t>(k)];
          const int e = fr / d_ffn;
          const int n = fr % d_ffn;
          int s = 0;
          while (s < top_k && routes.id(t, s) != e) ++s;

          const float h_up =
              dot(w.up[static_cast<std::size_t>(e)].row(n), x_t);
          const float g =
              gate_raw[(static_cast<std::size_t>(t) * top_k + s) * d_ffn + n];
          const float h = routes.weight(t, s) * silu(g) * h_up;
          const auto down_row =
              w.down_t[static_cast<std::size_t>(e)].row(n);
          for (int d = 0; d < d_model; ++d) {
            partial[static_cast<std::size_t>(d)] += down_row[d] * h;
          }
        }
        for (int d = 0; d < d_model; ++d) {
          y_t[d] += partial[static_cast<std::size_t>(d)];
        }
      }

      const std::uint64_t padded =
          tiles_executed(row.total_active) * MoEConfig::kTile;
      macs.up_macs += padded * static_cast<std::uint64_t>(d_model);
      macs.down_macs += padded * static_cast<std::uint64_t>(d_model);
      worker_active[static_cast<std::size_t>(worker)] +=
          static_cast<std::uint64_t>(row.total_active);
      worker_skipped[static_cast<std::size_t>(worker)] +=
          token_tiles - tiles_executed(row.total_active);
    }
  });

  add_shared_expert(w, x, nullptr, threads, report.outputs, counters);

  report.active_neurons_total =
      std::accumulate(worker_active.begin(), worker_active.end(),
                      std::uint64_t{0});
  report.tiles_total = static_cast<std::uint64_t>(batch) * token_tiles;
  report.tiles_skipped = std::accumulate(
      worker_skipped.begin(), worker_skipped.end(), std::uint64_t{0});
  const std::uint64_t routed_neurons =
      static_cast<std::uint64_t>(batch) * top_k *
      static_cast<std::uint64_t>(d_ffn);
  report.achieved_routed_sparsity =
      1.0 - static_cast<double>(report.active_neurons_total) /
                static_cast<double>(routed_neurons);
  report.macs = merge_counters(counters);
  report.path_used = ExecPath::kSparse;
  return report;
}

SwitchTable profile_tipping(const MoELayerWeights& w, float threshold,
                            std::span<const int> batch_grid, int repetitions,
                            Stopwatch* clock, std::uint64_t token_seed) {
  if (batch_grid.empty()) {
    throw ConfigError("profile_tipping: empty batch grid");
  }
  for (std::size_t i = 0; i < batch_grid.size(); ++i) {
    if (batch_grid[i] < 1 || (i > 0 && batch_grid[i] <= batch_grid[i - 1])) {
      throw ConfigError("profile_tipping: grid must be ascending, >= 1");
    }
  }
  if (repetitions < 1) {
    throw ConfigError("profile_tipping: repetitions must be >= 1");
  }

  SteadyStopwatch fallback;
  if (clock == nullptr) clock = &fallback;

  for (std::size_t gi = 0; gi < batch_grid.size(); ++gi) {
    const int batch = batch_grid[gi];
    const Matrix tokens =
        generate_tokens(batch, w.config.d_model, token_seed + gi);

    std::vector<double> sparse_times, dense_times;
    sparse_times.reserve(static_cast<std::size_t>(repetitions));
    dense_times.reserve(static_cast<std::size_t>(repetitions));
    for (int r = 0; r < repetitions; ++r) {
      const double t0 = clock->now_ms();
      forward_sparse(w, tokens, threshold);
      sparse_times.push_back(clock->now_ms() - t0);
    }
    for (int r = 0; r < repetitions; ++r) {
      const double t0 = clock->now_ms();
      forward_dense(w, tokens);
      dense_times.push_back(clock->now_ms() - t0);
    }
    if (median_of(dense_times) <= median_of(sparse_times)) {
      return SwitchTable{static_cast<std::size_t>(batch)};
    }
  }
  return SwitchTable{SwitchTable::kSparseAlways};
}

ForwardReport step(const MoELayerWeights& w, const Matrix& x, float threshold,
                   const SwitchTable& table, int threads) {
  if (table.use_dense(static_cast<std::size_t>(x.rows))) {
    return forward_dense(w, x, threads);
  }
  return forward_sparse(w, x, threshold, threads);
}

}  // namespace sparsekit
