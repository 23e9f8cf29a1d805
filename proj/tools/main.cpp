// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0
//
// moe-sparsekit: generate synthetic MoE layers, calibrate sparsity
// thresholds, run the dense/sparse execution paths with exact MAC
// accounting, and emit profiling and sweep reports.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sparsekit/activation.hpp"
#include "sparsekit/budget.hpp"
#include "sparsekit/calibrate.hpp"
#include "sparsekit/engine.hpp"
#include "sparsekit/model.hpp"
#include "sparsekit/profiler.hpp"
#include "sparsekit/router.hpp"

namespace {

using namespace sparsekit;

// exit codes: 0 ok, 2 usage/config, 3 io/format, 4 numerical check failed
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitCheck = 4;

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int resolve_threads(int flag_value, bool flag_given) {
  if (flag_given) {
    if (flag_value < 1) throw ConfigError("--threads must be >= 1");
    return flag_value;
  }
  if (const char* env = std::getenv("MOE_SPARSEKIT_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

double max_rel_diff(const Matrix& a, const Matrix& b) {
  float max_abs_diff = 0.0f;
  float max_abs_ref = 0.0f;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    max_abs_diff = std::max(max_abs_diff, std::fabs(a.data[i] - b.data[i]));
    max_abs_ref = std::max(max_abs_ref, std::fabs(b.data[i]));
  }
  return static_cast<double>(max_abs_diff) /
         std::max(1.0, static_cast<double>(max_abs_ref));
}

BudgetRatios parse_ratios(const std::string& text) {
  BudgetRatios ratios;
  double* slots[3] = {&ratios.r0, &ratios.r1, &ratios.r2};
  std::size_t begin = 0;
  for (int i = 0; i < 3; ++i) {
    const std::size_t sep = text.find(':', begin);
    const bool last = (i == 2);
    if (last != (sep == std::string::npos)) {
      throw ConfigError("--budget expects r0:r1:r2");
    }
    const std::string part =
        text.substr(begin, last ? std::string::npos : sep - begin);
    char* end = nullptr;
    *slots[i] = std::strtod(part.c_str(), &end);
    if (end != part.c_str() + part.size() || part.empty()) {
      throw ConfigError("--budget expects numeric r0:r1:r2");
    }
    begin = sep + 1;
  }
  return ratios;
}

void dump_outputs(const Matrix& outputs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (float v : outputs.data) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    const unsigned char b[4] = {
        static_cast<unsigned char>(bits & 0xff),
        static_cast<unsigned char>((bits >> 8) & 0xff),
        static_cast<unsigned char>((bits >> 16) & 0xff),
        static_cast<unsigned char>((bits >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  out.close();
  if (!out) throw IoError("write failed: " + path);
}

void print_report(const ForwardReport& report) {
  std::printf("path: %s\n",
              report.path_used == ExecPath::kDense ? "dense" : "sparse");
  std::printf("macs: gate=%llu up=%llu down=%llu other=%llu total=%llu\n",
              static_cast<unsigned long long>(report.macs.gate_macs),
              static_cast<unsigned long long>(report.macs.up_macs),
              static_cast<unsigned long long>(report.macs.down_macs),
              static_cast<unsigned long long>(report.macs.other_macs),
              static_cast<unsigned long long>(report.macs.total()));
  std::printf("achieved-routed-sparsity: %.9g\n",
              report.achieved_routed_sparsity);
  if (report.path_used == ExecPath::kSparse) {
    std::printf("tiles: skipped %llu of %llu\n",
                static_cast<unsigned long long>(report.tiles_skipped),
                static_cast<unsigned long long>(report.tiles_total));
  }
}

float resolve_threshold(const MoELayerWeights& weights, bool tau_given,
                        double tau, bool sparsity_given, double sparsity,
                        const std::string& calib_path, std::uint64_t seed) {
  if (tau_given) {
    if (tau < 0.0) throw ConfigError("--tau must be >= 0");
    return static_cast<float>(tau);
  }
  if (!sparsity_given) {
    throw ConfigError("need --sparsity or --tau for a sparse run");
  }
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw ConfigError("--sparsity must lie in [0, 1)");
  }
  if (!calib_path.empty()) {
    return static_cast<float>(lookup(load_table(calib_path), sparsity));
  }
  // no table on hand: calibrate on the fly from seeded tokens
  const MoEConfig& cfg = weights.config;
  const Matrix tokens = generate_tokens(512, cfg.d_model, seed + 1000);
  const auto sample =
      collect_magnitudes(weights, tokens, std::size_t{1} << 20, seed + 1001);
  const double targets[1] = {sparsity};
  const CalibrationTable table =
      build_table(sample, targets, cfg.top_k, cfg.d_ffn, cfg.d_shared);
  return static_cast<float>(lookup(table, sparsity));
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

struct GenArgs {
  int experts = 8;
  int topk = 2;
  int dmodel = 64;
  int dffn = 256;
  int shared_dim = 0;
  std::uint64_t seed = 0;
  double scale = 0.05;
  bool no_renormalize = false;
  std::string out;
};

void run_gen(const GenArgs& args) {
  MoEConfig cfg;
  cfg.n_experts = args.experts;
  cfg.top_k = args.topk;
  cfg.d_model = args.dmodel;
  cfg.d_ffn = args.dffn;
  cfg.d_shared = args.shared_dim;
  cfg.has_shared = args.shared_dim > 0;
  cfg.renormalize = !args.no_renormalize;

  const MoELayerWeights weights =
      generate_synthetic(cfg, args.seed, static_cast<float>(args.scale));
  save_weights(weights, args.out);
  std::printf(
      "gen: E=%d K=%d d_model=%d d_ffn=%d d_shared=%d renorm=%d -> %s "
      "(%llu bytes)\n",
      cfg.n_experts, cfg.top_k, cfg.d_model, cfg.d_ffn, cfg.d_shared,
      cfg.renormalize ? 1 : 0, args.out.c_str(),
      static_cast<unsigned long long>(weight_file_size(cfg)));
}

struct CalibrateArgs {
  std::string weights_path;
  int tokens = 512;
  std::vector<double> targets = {0.60, 0.70, 0.80, 0.85, 0.87};
  std::uint64_t seed = 0;
  std::size_t sample_cap = std::size_t{1} << 20;
  std::string out;
};

void run_calibrate(const CalibrateArgs& args) {
  const MoELayerWeights weights = load_weights(args.weights_path);
  const MoEConfig& cfg = weights.config;
  const Matrix tokens = generate_tokens(args.tokens, cfg.d_model, args.seed);
  const auto sample =
      collect_magnitudes(weights, tokens, args.sample_cap, args.seed + 1);
  const CalibrationTable table =
      build_table(sample, args.targets, cfg.top_k, cfg.d_ffn, cfg.d_shared);
  save_table(table, args.out);

  std::printf("calibration sample: %zu magnitudes\n", sample.size());
  for (const auto& entry : table.entries) {
    const double routed =
        total_to_routed(entry.target, cfg.top_k, cfg.d_ffn, cfg.d_shared);
    const auto below = std::lower_bound(sample.begin(), sample.end(),
                                        static_cast<float>(entry.threshold));
    const double achieved =
        static_cast<double>(below - sample.begin()) /
        static_cast<double>(sample.size());
    std::printf(
        "target %.9g -> routed %.9g tau %.9g achieved-routed %.9g "
        "(in-sample)\n",
        entry.target, routed, entry.threshold, achieved);
  }
  std::printf("table -> %s\n", args.out.c_str());
}

struct RunArgs {
  std::string weights_path;
  int batch = 8;
  std::uint64_t seed = 0;
  bool dense = false;
  double sparsity = 0.0;
  bool sparsity_given = false;
  double tau = 0.0;
  bool tau_given = false;
  std::string calib_path;
  std::string budget;
  bool mask_shared = false;  // R+S analysis mode
  bool use_switch = false;
  std::vector<int> switch_grid = {1, 2, 4, 8, 16, 32, 64, 128};
  int switch_reps = 3;
  std::string dump_path;
  int threads = 1;
  bool threads_given = false;
  int align_block = 0;       // 0 = keep the config default
  int renorm_override = -1;  // -1 keep, 0 off, 1 on
};

void run_run(const RunArgs& args) {
  const int mode_count = (args.dense ? 1 : 0) + (args.sparsity_given ? 1 : 0) +
                         (args.tau_given ? 1 : 0);
  if (mode_count != 1) {
    throw ConfigError("give exactly one of --dense, --sparsity, --tau");
  }
  if (!args.budget.empty() && !args.sparsity_given) {
    throw ConfigError("--budget needs --sparsity");
  }
  if (args.mask_shared && args.budget.empty()) {
    throw ConfigError("--rs is an analysis-mode flag and needs --budget");
  }

  MoELayerWeights weights = load_weights(args.weights_path);
  if (args.align_block != 0) weights.config.align_block = args.align_block;
  if (args.renorm_override >= 0) {
    weights.config.renormalize = args.renorm_override == 1;
  }
  weights.config.validate();
  const MoEConfig& cfg = weights.config;
  if (args.mask_shared && !cfg.has_shared) {
    throw ConfigError("--rs needs a model with a shared expert");
  }
  const int threads = resolve_threads(args.threads, args.threads_given);
  const Matrix tokens = generate_tokens(args.batch, cfg.d_model, args.seed);

  ForwardReport report;
  if (args.dense) {
    report = forward_dense(weights, tokens, threads);
    print_report(report);
  } else if (!args.budget.empty()) {
    // analysis mode: router-weight neuron budgeting over masked-dense
    const BudgetRatios ratios = parse_ratios(args.budget);
    const double s_active = 1.0 - args.sparsity;

    std::uint64_t scratch_macs = 0;
    Matrix logits(tokens.rows, cfg.n_experts);
    for (int t = 0; t < tokens.rows; ++t) {
      const auto row = matvec(weights.router, tokens.row(t), scratch_macs);
      std::copy(row.begin(), row.end(), logits.row(t).begin());
    }
    const RouteResult routes = route(logits, cfg.top_k, cfg.renormalize);

    MaskSet masks;
    masks.routed.resize(static_cast<std::size_t>(tokens.rows) * cfg.top_k *
                        static_cast<std::size_t>(cfg.d_ffn));
    std::vector<int> group_counts(3, 0);
    for (int t = 0; t < tokens.rows; ++t) {
      std::vector<float> slot_weights(static_cast<std::size_t>(cfg.top_k));
      for (int s = 0; s < cfg.top_k; ++s) {
        slot_weights[static_cast<std::size_t>(s)] = routes.weight(t, s);
      }
      const ExpertGroups groups = group_experts(slot_weights);
      const auto counts =
          allocate_budget(cfg.top_k, cfg.d_ffn, s_active, groups, ratios);
      if (t == 0) {
        group_counts[0] = groups.g0.empty()
                              ? 0
                              : counts[static_cast<std::size_t>(groups.g0[0])];
        group_counts[1] = groups.g1.empty()
                              ? 0
                              : counts[static_cast<std::size_t>(groups.g1[0])];
        group_counts[2] = groups.g2.empty()
                              ? 0
                              : counts[static_cast<std::size_t>(groups.g2[0])];
        std::printf(
            "budget: ratios %g:%g:%g mode %s groups |g0|=%zu |g1|=%zu "
            "|g2|=%zu neurons/expert g0=%d g1=%d g2=%d target-total=%d\n",
            ratios.r0, ratios.r1, ratios.r2, args.mask_shared ? "R+S" : "R",
            groups.g0.size(), groups.g1.size(), groups.g2.size(),
            group_counts[0], group_counts[1], group_counts[2],
            static_cast<int>(
                std::lround(s_active * cfg.top_k * cfg.d_ffn)));
      }
      for (int s = 0; s < cfg.top_k; ++s) {
        const int e = routes.id(t, s);
        const auto gate_out = matvec(weights.gate[static_cast<std::size_t>(e)],
                                     tokens.row(t), scratch_macs);
        const auto up_out = matvec(weights.up[static_cast<std::size_t>(e)],
                                   tokens.row(t), scratch_macs);
        const auto h = swiglu_rows(gate_out, up_out);
        const auto mask =
            apply_budget(h, counts[static_cast<std::size_t>(s)]);
        std::copy(mask.begin(), mask.end(),
                  masks.routed.begin() +
                      (static_cast<std::size_t>(t) * cfg.top_k + s) *
                          cfg.d_ffn);
      }
    }
    if (args.mask_shared) {
      // R+S: the shared expert gets a plain top-k mask at the same target
      masks.shared.resize(static_cast<std::size_t>(tokens.rows) *
                          static_cast<std::size_t>(cfg.d_shared));
      for (int t = 0; t < tokens.rows; ++t) {
        const auto gate_out =
            matvec(weights.shared_gate, tokens.row(t), scratch_macs);
        const auto up_out =
            matvec(weights.shared_up, tokens.row(t), scratch_macs);
        const auto h = swiglu_rows(gate_out, up_out);
        const auto mask = topk_mask(h, SparsityLevel(args.sparsity));
        std::copy(mask.begin(), mask.end(),
                  masks.shared.begin() +
                      static_cast<std::size_t>(t) * cfg.d_shared);
      }
    }
    report = forward_masked_dense(weights, tokens, masks, threads);
    print_report(report);
  } else {
    const float threshold = resolve_threshold(
        weights, args.tau_given, args.tau, args.sparsity_given, args.sparsity,
        args.calib_path, args.seed);
    std::printf("threshold: %.9g\n", static_cast<double>(threshold));

    if (args.use_switch) {
      const SwitchTable table = profile_tipping(
          weights, threshold, args.switch_grid, args.switch_reps, nullptr,
          args.seed + 2000);
      if (table.tipping_batch == SwitchTable::kSparseAlways) {
        std::printf("tipping-batch: none (sparse always)\n");
      } else {
        std::printf("tipping-batch: %zu\n", table.tipping_batch);
      }
      report = step(weights, tokens, threshold, table, threads);
    } else {
      report = forward_sparse(weights, tokens, threshold, threads);
    }
    print_report(report);

    if (report.path_used == ExecPath::kSparse) {
      // oracle check: sparse output must match masked-dense with the same
      // threshold masks
      std::uint64_t scratch_macs = 0;
      Matrix logits(tokens.rows, cfg.n_experts);
      for (int t = 0; t < tokens.rows; ++t) {
        const auto row = matvec(weights.router, tokens.row(t), scratch_macs);
        std::copy(row.begin(), row.end(), logits.row(t).begin());
      }
      const RouteResult routes = route(logits, cfg.top_k, cfg.renormalize);
      MaskSet masks;
      masks.routed.resize(static_cast<std::size_t>(tokens.rows) * cfg.top_k *
                          static_cast<std::size_t>(cfg.d_ffn));
      for (int t = 0; t < tokens.rows; ++t) {
        for (int s = 0; s < cfg.top_k; ++s) {
          const int e = routes.id(t, s);
          const auto gate_out =
              matvec(weights.gate[static_cast<std::size_t>(e)], tokens.row(t),
                     scratch_macs);
          const auto mask = threshold_mask(gate_out, threshold);
          std::copy(mask.begin(), mask.end(),
                    masks.routed.begin() +
                        (static_cast<std::size_t>(t) * cfg.top_k + s) *
                            cfg.d_ffn);
        }
      }
      const ForwardReport oracle =
          forward_masked_dense(weights, tokens, masks, threads);
      const double oracle_diff = max_rel_diff(report.outputs, oracle.outputs);
      std::printf("max-rel-diff vs masked-dense oracle: %.9g\n", oracle_diff);
      const ForwardReport dense = forward_dense(weights, tokens, threads);
      std::printf("max-rel-diff vs dense: %.9g\n",
                  max_rel_diff(report.outputs, dense.outputs));
      if (oracle_diff > 1e-5) {
        throw CheckFailure("sparse/masked-dense divergence " +
                           std::to_string(oracle_diff));
      }
    }
  }

  if (!args.dump_path.empty()) {
    dump_outputs(report.outputs, args.dump_path);
    std::printf("outputs -> %s\n", args.dump_path.c_str());
  }
}

struct SweepArgs {
  std::string weights_path;
  int tokens = 64;
  std::vector<double> targets = {0.0, 0.1, 0.2, 0.3, 0.4,
                                 0.5, 0.6, 0.7, 0.8, 0.9};
  double retention = 0.95;
  std::string mode = "R";
  std::uint64_t seed = 0;
  std::string out;
};

void run_sweep(const SweepArgs& args) {
  const MoELayerWeights weights = load_weights(args.weights_path);
  SweepMode mode;
  if (args.mode == "R") {
    mode = SweepMode::kRoutedOnly;
  } else if (args.mode == "R+S") {
    mode = SweepMode::kRoutedAndShared;
  } else {
    throw ConfigError("--mode must be R or R+S");
  }
  const Matrix tokens =
      generate_tokens(args.tokens, weights.config.d_model, args.seed);
  const SweepResult result =
      sweep_cutoff(weights, tokens, args.targets, args.retention, mode);
  emit_report(result, args.out);
  std::printf("sweep: %zu points, cutoff %.9g -> %s\n", result.points.size(),
              result.cutoff, args.out.c_str());
  for (const auto& p : result.points) {
    std::printf("  target %.9g achieved-total %.9g quality %.9g rel-err %.9g\n",
                p.target, p.achieved_total, p.quality, p.rel_error);
  }
}

struct ProfileArgs {
  std::string weights_path;
  int expert = 0;
  int tokens = 2048;
  double sparsity = 0.95;
  double bin_width = 0.006;
  std::uint64_t seed = 0;
  std::string out;
};

void run_profile(const ProfileArgs& args) {
  const MoELayerWeights weights = load_weights(args.weights_path);
  const Matrix tokens =
      generate_tokens(args.tokens, weights.config.d_model, args.seed);
  const ActivationProfile profile =
      profile_expert(weights, args.expert, tokens, SparsityLevel(args.sparsity),
                     args.bin_width);
  emit_histogram(profile, args.out);

  std::uint64_t bin_sum = 0;
  for (const auto& [index, count] : profile.bins) bin_sum += count;
  double mean_count = 0.0;
  for (std::int64_t c : profile.per_neuron_counts) {
    mean_count += static_cast<double>(c);
  }
  mean_count /= static_cast<double>(profile.per_neuron_counts.size());
  std::printf(
      "profile expert %d: events=%llu (bin sum %llu), never-activated=%d of "
      "%zu, mean per-neuron count=%.9g\n",
      args.expert, static_cast<unsigned long long>(profile.total_events),
      static_cast<unsigned long long>(bin_sum), profile.never_activated,
      profile.per_neuron_counts.size(), mean_count);
  std::printf("histogram -> %s\n", args.out.c_str());
}

struct BenchArgs {
  std::string weights_path;
  int batch = 32;
  double sparsity = 0.0;
  bool sparsity_given = false;
  double tau = 0.0;
  bool tau_given = false;
  std::string calib_path;
  std::uint64_t seed = 0;
  int reps = 5;
  int threads = 1;
  bool threads_given = false;
};

void run_bench(const BenchArgs& args) {
  if (args.sparsity_given == args.tau_given) {
    throw ConfigError("give exactly one of --sparsity, --tau");
  }
  const MoELayerWeights weights = load_weights(args.weights_path);
  const MoEConfig& cfg = weights.config;
  const int threads = resolve_threads(args.threads, args.threads_given);
  const float threshold = resolve_threshold(
      weights, args.tau_given, args.tau, args.sparsity_given, args.sparsity,
      args.calib_path, args.seed);
  const Matrix tokens = generate_tokens(args.batch, cfg.d_model, args.seed);

  SteadyStopwatch clock;
  std::vector<double> dense_times, sparse_times;
  ForwardReport dense, sparse;
  for (int r = 0; r < args.reps; ++r) {
    double t0 = clock.now_ms();
    dense = forward_dense(weights, tokens, threads);
    dense_times.push_back(clock.now_ms() - t0);
    t0 = clock.now_ms();
    sparse = forward_sparse(weights, tokens, threshold, threads);
    sparse_times.push_back(clock.now_ms() - t0);
  }
  std::sort(dense_times.begin(), dense_times.end());
  std::sort(sparse_times.begin(), sparse_times.end());
  const double dense_med = dense_times[dense_times.size() / 2];
  const double sparse_med = sparse_times[sparse_times.size() / 2];

  std::printf("threshold: %.9g\n", static_cast<double>(threshold));
  std::printf("dense  macs: gate=%llu up=%llu down=%llu other=%llu\n",
              static_cast<unsigned long long>(dense.macs.gate_macs),
              static_cast<unsigned long long>(dense.macs.up_macs),
              static_cast<unsigned long long>(dense.macs.down_macs),
              static_cast<unsigned long long>(dense.macs.other_macs));
  std::printf("sparse macs: gate=%llu up=%llu down=%llu other=%llu\n",
              static_cast<unsigned long long>(sparse.macs.gate_macs),
              static_cast<unsigned long long>(sparse.macs.up_macs),
              static_cast<unsigned long long>(sparse.macs.down_macs),
              static_cast<unsigned long long>(sparse.macs.other_macs));

  const std::uint64_t dense_updown = dense.macs.up_macs + dense.macs.down_macs;
  const std::uint64_t sparse_updown_padded =
      sparse.macs.up_macs + sparse.macs.down_macs;
  const std::uint64_t sparse_updown_unpadded =
      2ull * static_cast<std::uint64_t>(cfg.d_model) *
      sparse.active_neurons_total;
  std::printf("achieved routed sparsity: %.9g\n",
              sparse.achieved_routed_sparsity);
  if (sparse_updown_unpadded > 0) {
    std::printf("up/down MAC reduction: %.9g x unpadded, %.9g x padded\n",
                static_cast<double>(dense_updown) /
                    static_cast<double>(sparse_updown_unpadded),
                static_cast<double>(dense_updown) /
                    static_cast<double>(sparse_updown_padded));
  } else {
    std::printf("up/down MAC reduction: all routed neurons masked\n");
  }

  const std::uint64_t dense_routed =
      dense.macs.gate_macs + dense.macs.up_macs + dense.macs.down_macs;
  const std::uint64_t sparse_routed =
      sparse.macs.gate_macs + sparse_updown_padded;
  const double ratio = static_cast<double>(sparse_routed) /
                       static_cast<double>(dense_routed);
  const double padded_sparsity =
      1.0 - static_cast<double>(sparse_updown_padded) /
                static_cast<double>(dense_updown);
  std::printf("routed sparse/dense MAC ratio: %.9g (theory (1+2(1-s))/3 with "
              "s_padded=%.9g -> %.9g)\n",
              ratio, padded_sparsity,
              (1.0 + 2.0 * (1.0 - padded_sparsity)) / 3.0);
  std::printf("tiles: skipped %llu of %llu\n",
              static_cast<unsigned long long>(sparse.tiles_skipped),
              static_cast<unsigned long long>(sparse.tiles_total));
  std::printf("median times (informational): dense %.3f ms, sparse %.3f ms\n",
              dense_med, sparse_med);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale MoE core with intra-expert activation sparsity"};
  app.require_subcommand(1);

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "generate a synthetic weight file");
  gen->add_option("--experts", gen_args.experts, "number of routed experts")
      ->required();
  gen->add_option("--topk", gen_args.topk, "active experts per token")
      ->required();
  gen->add_option("--dmodel", gen_args.dmodel, "model width")->required();
  gen->add_option("--dffn", gen_args.dffn, "per-expert FFN width")->required();
  gen->add_option("--shared-dim", gen_args.shared_dim,
                  "shared-expert FFN width (0 = none)");
  gen->add_option("--seed", gen_args.seed, "generator seed");
  gen->add_option("--scale", gen_args.scale, "uniform weight scale");
  gen->add_flag("--no-renormalize", gen_args.no_renormalize,
                "keep raw softmax top-k weights");
  gen->add_option("--out", gen_args.out, "output weight file")->required();
  gen->callback([&] { run_gen(gen_args); });

  CalibrateArgs cal_args;
  auto* cal = app.add_subcommand("calibrate",
                                 "build the sparsity->threshold table");
  cal->add_option("--weights", cal_args.weights_path, "weight file")
      ->required();
  cal->add_option("--tokens", cal_args.tokens, "calibration token count");
  cal->add_option("--targets", cal_args.targets,
                  "target total sparsities, ascending")
      ->delimiter(',');
  cal->add_option("--seed", cal_args.seed, "token seed");
  cal->add_option("--sample-cap", cal_args.sample_cap,
                  "reservoir sample size cap");
  cal->add_option("--out", cal_args.out, "output table file")->required();
  cal->callback([&] { run_calibrate(cal_args); });

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "run one forward step");
  run->add_option("--weights", run_args.weights_path, "weight file")
      ->required();
  run->add_option("--batch", run_args.batch, "token batch size");
  run->add_option("--seed", run_args.seed, "token seed");
  run->add_flag("--dense", run_args.dense, "dense reference path");
  auto* sparsity_opt =
      run->add_option("--sparsity", run_args.sparsity, "target total sparsity");
  auto* tau_opt = run->add_option("--tau", run_args.tau, "masking threshold");
  run->add_option("--calib", run_args.calib_path, "calibration table file");
  run->add_option("--budget", run_args.budget,
                  "router-weight budget ratios r0:r1:r2 (analysis mode)");
  run->add_flag("--rs", run_args.mask_shared,
                "analysis mode: mask the shared expert too (R+S)");
  run->add_option("--align-block", run_args.align_block,
                  "override the dispatch block size");
  bool renorm_on = false;
  bool renorm_off = false;
  auto* renorm_opt = run->add_flag(
      "--renorm", renorm_on, "override: renormalize the top-k weights");
  auto* no_renorm_opt = run->add_flag(
      "--no-renorm", renorm_off, "override: keep raw softmax top-k weights");
  renorm_opt->excludes(no_renorm_opt);
  run->add_flag("--switch", run_args.use_switch,
                "profile tipping batch and pick the path per step");
  run->add_option("--switch-grid", run_args.switch_grid,
                  "batch grid for tipping profile")
      ->delimiter(',');
  run->add_option("--switch-reps", run_args.switch_reps,
                  "timing repetitions per grid point");
  run->add_option("--dump-output", run_args.dump_path,
                  "write outputs as raw fp32");
  auto* run_threads = run->add_option("--threads", run_args.threads,
                                      "worker threads (default 1)");
  run->callback([&] {
    run_args.sparsity_given = sparsity_opt->count() > 0;
    run_args.tau_given = tau_opt->count() > 0;
    run_args.threads_given = run_threads->count() > 0;
    if (renorm_opt->count() > 0) run_args.renorm_override = 1;
    if (no_renorm_opt->count() > 0) run_args.renorm_override = 0;
    run_run(run_args);
  });

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "masked-dense sparsity sweep");
  sweep->add_option("--weights", sweep_args.weights_path, "weight file")
      ->required();
  sweep->add_option("--tokens", sweep_args.tokens, "evaluation token count");
  sweep->add_option("--targets", sweep_args.targets, "sparsity targets")
      ->delimiter(',');
  sweep->add_option("--retention", sweep_args.retention,
                    "quality retention for the cutoff");
  sweep->add_option("--mode", sweep_args.mode, "R or R+S");
  sweep->add_option("--seed", sweep_args.seed, "token seed");
  sweep->add_option("--out", sweep_args.out, "output CSV")->required();
  sweep->callback([&] { run_sweep(sweep_args); });

  ProfileArgs prof_args;
  auto* prof = app.add_subcommand("profile", "activation profile of one expert");
  prof->add_option("--weights", prof_args.weights_path, "weight file")
      ->required();
  prof->add_option("--expert", prof_args.expert, "expert id");
  prof->add_option("--tokens", prof_args.tokens, "token count");
  prof->add_option("--sparsity", prof_args.sparsity,
                   "top-k masking sparsity for survivor counts");
  prof->add_option("--bin-width", prof_args.bin_width, "histogram bin width");
  prof->add_option("--seed", prof_args.seed, "token seed");
  prof->add_option("--out", prof_args.out, "output histogram file")
      ->required();
  prof->callback([&] { run_profile(prof_args); });

  BenchArgs bench_args;
  auto* bench =
      app.add_subcommand("bench", "dense vs sparse MAC counts and timings");
  bench->add_option("--weights", bench_args.weights_path, "weight file")
      ->required();
  bench->add_option("--batch", bench_args.batch, "token batch size");
  auto* bench_sparsity = bench->add_option("--sparsity", bench_args.sparsity,
                                           "target total sparsity");
  auto* bench_tau =
      bench->add_option("--tau", bench_args.tau, "masking threshold");
  bench->add_option("--calib", bench_args.calib_path,
                    "calibration table file");
  bench->add_option("--seed", bench_args.seed, "token seed");
  bench->add_option("--reps", bench_args.reps, "timing repetitions");
  auto* bench_threads =
      bench->add_option("--threads", bench_args.threads, "worker threads");
  bench->callback([&] {
    bench_args.sparsity_given = bench_sparsity->count() > 0;
    bench_args.tau_given = bench_tau->count() > 0;
    bench_args.threads_given = bench_threads->count() > 0;
    run_bench(bench_args);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  } catch (const CheckFailure& e) {
    std::fprintf(stderr, "check failed: %s\n", e.what());
    return kExitCheck;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kExitIo;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const CalibrationError& e) {
    std::fprintf(stderr, "calibration error: %s\n", e.what());
    return kExitIo;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return kExitUsage;
  } catch (const IndexError& e) {
    std::fprintf(stderr, "index error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
