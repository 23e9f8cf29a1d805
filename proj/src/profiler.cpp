// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sparsekit/calibrate.hpp"
#include "sparsekit/router.hpp"

namespace sparsekit {

namespace {

constexpr const char* kCsvHeader =
    "target,achieved_total,achieved_routed,quality,rel_error,path";

std::int64_t bin_index(double value, double bin_width) {
  return static_cast<std::int64_t>(
      std::floor((value + 0.5 * bin_width) / bin_width));
}

const char* mode_label(SweepMode mode) {
  return mode == SweepMode::kRoutedOnly ? "R" : "R+S";
}

}  // namespace

ActivationProfile profile_expert(const MoELayerWeights& w, int expert_id,
                                 const Matrix& tokens, SparsityLevel s,
                                 double bin_width) {
  const MoEConfig& cfg = w.config;
  if (expert_id < 0 || expert_id >= cfg.n_experts) {
    throw IndexError("profile_expert: expert " + std::to_string(expert_id) +
                     " outside [0, " + std::to_string(cfg.n_experts) + ")");
  }
  if (tokens.cols != cfg.d_model) {
    throw ShapeError("profile_expert: tokens must be B x d_model");
  }
  if (!(bin_width > 0.0)) {
    throw ConfigError("profile_expert: bin_width must be > 0");
  }

  ActivationProfile profile;
  profile.bin_width = bin_width;
  profile.per_neuron_counts.assign(static_cast<std::size_t>(cfg.d_ffn), 0);

  const Matrix& gate_w = w.gate[static_cast<std::size_t>(expert_id)];
  const Matrix& up_w = w.up[static_cast<std::size_t>(expert_id)];
  std::uint64_t scratch_macs = 0;
  for (int t = 0; t < tokens.rows; ++t) {
    const auto gate_out = matvec(gate_w, tokens.row(t), scratch_macs);
    const auto up_out = matvec(up_w, tokens.row(t), scratch_macs);
    const auto h = swiglu_rows(gate_out, up_out);
    for (float v : h) {
      ++profile.bins[bin_index(static_cast<double>(v), bin_width)];
    }
    profile.total_events += h.size();
    const auto mask = topk_mask(h, s);
    for (int i = 0; i < cfg.d_ffn; ++i) {
      if (mask[static_cast<std::size_t>(i)]) {
        ++profile.per_neuron_counts[static_cast<std::size_t>(i)];
      }
    }
  }
  profile.never_activated = static_cast<int>(
      std::count(profile.per_neuron_counts.begin(),
                 profile.per_neuron_counts.end(), std::int64_t{0}));
  return profile;
}

double mean_relative_error(const Matrix& outputs,
                           const Matrix& dense_outputs) {
  if (!outputs.same_shape(dense_outputs)) {
    throw ShapeError("mean_relative_error: shape mismatch");
  }
  double sum = 0.0;
  int counted = 0;
  for (int t = 0; t < outputs.rows; ++t) {
    double diff_sq = 0.0;
    double ref_sq = 0.0;
    for (int d = 0; d < outputs.cols; ++d) {
      const double delta = static_cast<double>(outputs.at(t, d)) -
                           static_cast<double>(dense_outputs.at(t, d));
      diff_sq += delta * delta;
      ref_sq += static_cast<double>(dense_outputs.at(t, d)) *
                static_cast<double>(dense_outputs.at(t, d));
    }
    const double ref = std::sqrt(ref_sq);
    if (ref < 1e-12) continue;
    sum += std::sqrt(diff_sq) / ref;
    ++counted;
  }
  return counted == 0 ? 0.0 : sum / counted;
}

MaskSet build_topk_masks(const MoELayerWeights& w, const Matrix& tokens,
                         SparsityLevel s, SweepMode mode) {
  const MoEConfig& cfg = w.config;
  if (tokens.cols != cfg.d_model) {
    throw ShapeError("build_topk_masks: tokens must be B x d_model");
  }

  std::uint64_t scratch_macs = 0;
  Matrix logits(tokens.rows, cfg.n_experts);
  for (int t = 0; t < tokens.rows; ++t) {
    const auto row = matvec(w.router, tokens.row(t), scratch_macs);
    std::copy(row.begin(), row.end(), logits.row(t).begin());
  }
  const RouteResult routes = route(logits, cfg.top_k, cfg.renormalize);

  MaskSet masks;
  masks.routed.resize(static_cast<std::size_t>(tokens.rows) * cfg.top_k *
                      static_cast<std::size_t>(cfg.d_ffn));
  for (int t = 0; t < tokens.rows; ++t) {
    for (int slot = 0; slot < cfg.top_k; ++slot) {
      const int e = routes.id(t, slot);
      const auto gate_out = matvec(w.gate[static_cast<std::size_t>(e)],
                                   tokens.row(t), scratch_macs);
      const auto up_out = matvec(w.up[static_cast<std::size_t>(e)],
                                 tokens.row(t), scratch_macs);
      const auto h = swiglu_rows(gate_out, up_out);
      const auto mask = topk_mask(h, s);
      std::copy(mask.begin(), mask.end(),
                masks.routed.begin() +
                    (static_cast<std::size_t>(t) * cfg.top_k + slot) *
                        cfg.d_ffn);
    }
  }

  if (mode == SweepMode::kRoutedAndShared && cfg.has_shared) {
    masks.shared.resize(static_cast<std::size_t>(tokens.rows) *
                        static_cast<std::size_t>(cfg.d_shared));
    for (int t = 0; t < tokens.rows; ++t) {
      const auto gate_out =
          matvec(w.shared_gate, tokens.row(t), scratch_macs);
      const auto up_out = matvec(w.shared_up, tokens.row(t), scratch_macs);
      const auto h = swiglu_rows(gate_out, up_out);
      const auto mask = topk_mask(h, s);
      std::copy(mask.begin(), mask.end(),
                masks.shared.begin() +
                    static_cast<std::size_t>(t) * cfg.d_shared);
    }
  }
  return masks;
}

SweepResult sweep_cutoff(const MoELayerWeights& w, const Matrix& eval_tokens,
                         std::span<const double> targets, double retention,
                         SweepMode mode, const QualityMetric& metric) {
  const MoEConfig& cfg = w.config;
  if (targets.empty()) {
    throw ConfigError("sweep_cutoff: no targets");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!(targets[i] >= 0.0 && targets[i] <= 1.0)) {
      throw ConfigError("sweep_cutoff: targets must lie in [0, 1]");
    }
    if (i > 0 && !(targets[i] > targets[i - 1])) {
      throw ConfigError("sweep_cutoff: targets must be strictly increasing");
    }
  }
  if (!(retention > 0.0 && retention <= 1.0)) {
    throw ConfigError("sweep_cutoff: retention must lie in (0, 1]");
  }

  const ForwardReport dense = forward_dense(w, eval_tokens);

  const auto evaluate = [&](double target) {
    const MaskSet masks =
        build_topk_masks(w, eval_tokens, SparsityLevel(target), mode);
    const ForwardReport rep = forward_masked_dense(w, eval_tokens, masks);

    SweepPoint point;
    point.target = target;
    point.rel_error = mean_relative_error(rep.outputs, dense.outputs);
    point.quality = metric ? metric(rep.outputs, dense.outputs)
                           : 1.0 - point.rel_error;
    point.achieved_routed = rep.achieved_routed_sparsity;

    std::uint64_t masked_shared = 0;
    for (std::uint8_t m : masks.shared) masked_shared += m ? 0 : 1;
    const std::uint64_t routed_neurons =
        static_cast<std::uint64_t>(eval_tokens.rows) * cfg.top_k *
        static_cast<std::uint64_t>(cfg.d_ffn);
    const std::uint64_t masked_routed =
        routed_neurons - rep.active_neurons_total;
    const std::uint64_t per_token_total =
        static_cast<std::uint64_t>(cfg.top_k) * cfg.d_ffn + cfg.d_shared;
    point.achieved_total =
        static_cast<double>(masked_routed + masked_shared) /
        static_cast<double>(static_cast<std::uint64_t>(eval_tokens.rows) *
                            per_token_total);
    point.path = mode_label(mode);
    return point;
  };

  // baseline is always the zero-sparsity point
  const SweepPoint baseline = evaluate(0.0);

  SweepResult result;
  result.points.reserve(targets.size());
  for (double target : targets) {
    result.points.push_back(target == 0.0 ? baseline : evaluate(target));
  }

  result.cutoff = 0.0;
  const double floor = retention * baseline.quality;
  for (const auto& point : result.points) {
    if (point.quality >= floor) {
      result.cutoff = std::max(result.cutoff, point.target);
    }
  }
  return result;
}

void emit_report(const SweepResult& result,
                 const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open for writing: " + path.string());
  }
  out << kCsvHeader << "\n";
  char buf[192];
  for (const auto& p : result.points) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g,%s\n", p.target,
                  p.achieved_total, p.achieved_routed, p.quality, p.rel_error,
                  p.path.c_str());
    out << buf;
  }
  if (!result.points.empty()) {
    std::snprintf(buf, sizeof(buf), "# cutoff=%.9g\n", result.cutoff);
    out << buf;
  }
  out.close();
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

SweepResult read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open for reading: " + path.string());
  }
  std::string line;
  std::uint64_t offset = 0;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw FormatError("missing report header", 0);
  }
  offset += line.size() + 1;

  SweepResult result;
  while (std::getline(in, line)) {
    if (line.rfind("# cutoff=", 0) == 0) {
      result.cutoff = std::strtod(line.c_str() + 9, nullptr);
      offset += line.size() + 1;
      continue;
    }
    if (line.empty()) {
      offset += 1;
      continue;
    }
    std::istringstream fields(line);
    std::string field;
    SweepPoint p;
    double* const slots[5] = {&p.target, &p.achieved_total,
                              &p.achieved_routed, &p.quality, &p.rel_error};
    for (double* slot : slots) {
      if (!std::getline(fields, field, ',')) {
        throw FormatError("short report row", offset);
      }
      *slot = std::strtod(field.c_str(), nullptr);
    }
    if (!std::getline(fields, p.path)) {
      throw FormatError("report row missing path", offset);
    }
    result.points.push_back(std::move(p));
    offset += line.size() + 1;
  }
  return result;
}

void emit_histogram(const ActivationProfile& profile,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open for writing: " + path.string());
  }
  char buf[96];
  for (const auto& [index, count] : profile.bins) {
    std::snprintf(buf, sizeof(buf), "%.9g\t%llu\n",
                  static_cast<double>(index) * profile.bin_width,
                  static_cast<unsigned long long>(count));
    out << buf;
  }
  out.close();
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

}  // namespace sparsekit
