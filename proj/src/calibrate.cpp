// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "sparsekit/activation.hpp"
#include "sparsekit/rng.hpp"
#include "sparsekit/router.hpp"

namespace sparsekit {

namespace {

constexpr const char* kTableHeader = "# moe-sparsekit calib v1";

}  // namespace

double total_to_routed(double s_total, int top_k, int d_ffn, int d_shared) {
  const double routed_neurons =
      static_cast<double>(top_k) * static_cast<double>(d_ffn);
  if (!(routed_neurons > 0.0)) {
    throw ConfigError("total_to_routed: K * d_ffn must be positive");
  }
  if (!(s_total >= 0.0 && s_total <= 1.0)) {
    throw ConfigError("total_to_routed: s_total must lie in [0, 1]");
  }
  if (d_shared < 0) {
    throw ConfigError("total_to_routed: d_shared must be >= 0");
  }
  if (d_shared == 0) return s_total;
  const double ratio = (routed_neurons + d_shared) / routed_neurons;
  return std::min(1.0, s_total * ratio);
}

double routed_to_total(double s_routed, int top_k, int d_ffn, int d_shared) {
  const double routed_neurons =
      static_cast<double>(top_k) * static_cast<double>(d_ffn);
  if (!(routed_neurons > 0.0)) {
    throw ConfigError("routed_to_total: K * d_ffn must be positive");
  }
  if (d_shared == 0) return s_routed;
  return s_routed * routed_neurons / (routed_neurons + d_shared);
}

std::vector<float> collect_magnitudes(const MoELayerWeights& w,
                                      const Matrix& tokens,
                                      std::size_t sample_cap,
                                      std::uint64_t seed) {
  const MoEConfig& cfg = w.config;
  if (tokens.rows < 1 || tokens.cols != cfg.d_model) {
    throw ShapeError("collect_magnitudes: tokens must be B x d_model");
  }
  if (sample_cap == 0) {
    throw ConfigError("collect_magnitudes: sample_cap must be >= 1");
  }

  std::uint64_t scratch_macs = 0;
  Matrix logits(tokens.rows, cfg.n_experts);
  for (int t = 0; t < tokens.rows; ++t) {
    const auto row = matvec(w.router, tokens.row(t), scratch_macs);
    std::copy(row.begin(), row.end(), logits.row(t).begin());
  }
  const RouteResult routes = route(logits, cfg.top_k, cfg.renormalize);

  SplitMix64 rng(seed);
  std::vector<float> sample;
  sample.reserve(std::min<std::size_t>(
      sample_cap, static_cast<std::size_t>(tokens.rows) * cfg.top_k *
                      static_cast<std::size_t>(cfg.d_ffn)));
  std::uint64_t seen = 0;
  for (int t = 0; t < tokens.rows; ++t) {
    for (int s = 0; s < cfg.top_k; ++s) {
      const int e = routes.id(t, s);
      const auto gate_out =
          matvec(w.gate[static_cast<std::size_t>(e)], tokens.row(t),
                 scratch_macs);
      for (float g : gate_out) {
        const float mag = std::fabs(silu(g));
        if (sample.size() < sample_cap) {
          sample.push_back(mag);
        } else {
          const std::uint64_t j = rng.next_below(seen + 1);
          if (j < sample_cap) {
            sample[static_cast<std::size_t>(j)] = mag;
          }
        }
        ++seen;
      }
    }
  }
  std::sort(sample.begin(), sample.end());
  return sample;
}

CalibrationTable build_table(std::span<const float> sorted_magnitudes,
                             std::span<const double> targets, int top_k,
                             int d_ffn, int d_shared) {
  if (sorted_magnitudes.empty()) {
    throw CalibrationError("build_table: empty calibration sample");
  }
  if (targets.empty()) {
    throw ConfigError("build_table: no targets");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!(targets[i] >= 0.0 && targets[i] < 1.0)) {
      throw ConfigError("build_table: targets must lie in [0, 1)");
    }
    if (i > 0 && !(targets[i] > targets[i - 1])) {
      throw ConfigError("build_table: targets must be strictly increasing");
    }
  }

  const std::size_t n = sorted_magnitudes.size();
  CalibrationTable table;
  table.entries.reserve(targets.size());
  for (double target : targets) {
    const double s_routed = total_to_routed(target, top_k, d_ffn, d_shared);
    double tau = 0.0;
    if (s_routed > 0.0) {
      const std::size_t rank = std::min(
          n - 1, static_cast<std::size_t>(
                     std::ceil(s_routed * static_cast<double>(n))));
      tau = static_cast<double>(sorted_magnitudes[rank]);
    }
    table.entries.push_back({target, tau});
  }
  return table;
}

double lookup(const CalibrationTable& table, double target) {
  if (table.entries.empty()) {
    throw CalibrationError("lookup: empty table");
  }
  const auto& entries = table.entries;
  if (target <= entries.front().target) return entries.front().threshold;
  if (target >= entries.back().target) return entries.back().threshold;
  for (std::size_t i = 1; i < entries.size(); ++i) {
    const auto& lo = entries[i - 1];
    const auto& hi = entries[i];
    if (target == hi.target) return hi.threshold;
    if (target < hi.target) {
      const double frac = (target - lo.target) / (hi.target - lo.target);
      return lo.threshold + frac * (hi.threshold - lo.threshold);
    }
  }
  return entries.back().threshold;  // unreachable
}

void save_table(const CalibrationTable& table,
                const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open for writing: " + path.string());
  }
  out << kTableHeader << "\n";
  char line[96];
  for (const auto& entry : table.entries) {
    std::snprintf(line, sizeof(line), "%.9g\t%.9g\n", entry.target,
                  entry.threshold);
    out << line;
  }
  out.close();
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

CalibrationTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open for reading: " + path.string());
  }
  std::string line;
  std::uint64_t offset = 0;
  if (!std::getline(in, line) || line != kTableHeader) {
    throw FormatError("missing calibration header", 0);
  }
  offset += line.size() + 1;

  CalibrationTable table;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("expected <target>\\t<threshold>", offset);
    }
    char* end = nullptr;
    const double target = std::strtod(line.c_str(), &end);
    if (end != line.c_str() + tab) {
      throw FormatError("bad target value", offset);
    }
    const double tau = std::strtod(line.c_str() + tab + 1, &end);
    if (end != line.c_str() + line.size()) {
      throw FormatError("bad threshold value", offset + tab + 1);
    }
    if (!table.entries.empty()) {
      if (!(target > table.entries.back().target)) {
        throw FormatError("targets not strictly increasing", offset);
      }
      if (tau < table.entries.back().threshold) {
        throw FormatError("thresholds not non-decreasing", offset + tab + 1);
      }
    }
    table.entries.push_back({target, tau});
    offset += line.size() + 1;
  }
  return table;
}

}  // namespace sparsekit
