// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/linalg.hpp"

#include <string>

namespace sparsekit {

float dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: length mismatch " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  }
  float acc = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += a[i] * b[i];
  }
  return acc;
}

std::vector<float> matvec(const Matrix& w, std::span<const float> x,
                          std::uint64_t& macs) {
  if (static_cast<std::size_t>(w.cols) != x.size()) {
    throw ShapeError("matvec: " + std::to_string(w.rows) + "x" +
                     std::to_string(w.cols) + " against vector of length " +
                     std::to_string(x.size()));
  }
  std::vector<float> y(static_cast<std::size_t>(w.rows));
  for (int i = 0; i < w.rows; ++i) {
    const float* row = w.data.data() + static_cast<std::size_t>(i) * w.cols;
    float acc = 0.0f;
    for (int j = 0; j < w.cols; ++j) {
      acc += row[j] * x[j];
    }
    y[static_cast<std::size_t>(i)] = acc;
  }
  macs += static_cast<std::uint64_t>(w.rows) * static_cast<std::uint64_t>(w.cols);
  return y;
}

Matrix gather_rows(const Matrix& w, std::span<const std::int32_t> idx) {
  Matrix out(static_cast<int>(idx.size()), w.cols);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::int32_t r = idx[k];
    if (r < 0 || r >= w.rows) {
      throw IndexError("gather_rows: index " + std::to_string(r) +
                       " outside [0, " + std::to_string(w.rows) + ")");
    }
    const auto src = w.row(r);
    std::copy(src.begin(), src.end(), out.row(static_cast<int>(k)).begin());
  }
  return out;
}

std::vector<float> gathered_matvec_t(const Matrix& w_t,
                                     std::span<const std::int32_t> idx,
                                     std::span<const float> h,
                                     std::uint64_t& macs) {
  if (idx.size() != h.size()) {
    throw ShapeError("gathered_matvec_t: " + std::to_string(idx.size()) +
                     " indices against " + std::to_string(h.size()) +
                     " values");
  }
  std::vector<float> y(static_cast<std::size_t>(w_t.cols), 0.0f);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::int32_t r = idx[k];
    if (r < 0 || r >= w_t.rows) {
      throw IndexError("gathered_matvec_t: index " + std::to_string(r) +
                       " outside [0, " + std::to_string(w_t.rows) + ")");
    }
    const float* row = w_t.data.data() + static_cast<std::size_t>(r) * w_t.cols;
    const float hk = h[k];
    for (int d = 0; d < w_t.cols; ++d) {
      y[static_cast<std::size_t>(d)] += row[d] * hk;
    }
  }
  macs += static_cast<std::uint64_t>(idx.size()) *
          static_cast<std::uint64_t>(w_t.cols);
  return y;
}

}  // namespace sparsekit
