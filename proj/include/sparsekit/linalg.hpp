// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sparsekit/errors.hpp"

namespace sparsekit {

// Dense row-major fp32 matrix. Every reduction in this library runs with a
// float accumulator in ascending index order, so repeated runs (and
// different worker counts) produce identical bits.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;  // rows * cols entries, row-major

  Matrix() = default;
  Matrix(int r, int c)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0f) {}

  float& at(int r, int c) {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  float at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }

  std::span<const float> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols,
            static_cast<std::size_t>(cols)};
  }
  std::span<float> row(int r) {
    return {data.data() + static_cast<std::size_t>(r) * cols,
            static_cast<std::size_t>(cols)};
  }

  bool same_shape(const Matrix& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

// Multiply-accumulate counters split by pipeline stage. gate/up/down count
// the routed expert projections only; router and shared-expert work goes to
// `other`. A counter belongs to one call context and is merged by summation,
// so totals are exact integers regardless of worker count.
struct MacCounter {
  std::uint64_t gate_macs = 0;
  std::uint64_t up_macs = 0;
  std::uint64_t down_macs = 0;
  std::uint64_t other_macs = 0;

  std::uint64_t total() const {
    return gate_macs + up_macs + down_macs + other_macs;
  }

  void reset() { *this = MacCounter{}; }

  MacCounter& operator+=(const MacCounter& o) {
    gate_macs += o.gate_macs;
    up_macs += o.up_macs;
    down_macs += o.down_macs;
    other_macs += o.other_macs;
    return *this;
  }
};

// Ascending-index float dot product.
float dot(std::span<const float> a, std::span<const float> b);

// y = W x with y[i] = sum_j W[i,j] * x[j], j ascending. Charges
// rows*cols MACs to `macs`.
std::vector<float> matvec(const Matrix& w, std::span<const float> x,
                          std::uint64_t& macs);

// Rows of `w` selected by `idx`, in order. Duplicates allowed; pure data
// movement, no MACs.
Matrix gather_rows(const Matrix& w, std::span<const std::int32_t> idx);

// Down projection restricted to gathered neuron rows of a transposed-stored
// N x D matrix: y[d] = sum_k w_t(idx[k], d) * h[k], k ascending. With
// idx = 0..N-1 this is exactly the dense down projection, same reduction
// order. Charges idx.size()*cols MACs.
std::vector<float> gathered_matvec_t(const Matrix& w_t,
                                     std::span<const std::int32_t> idx,
                                     std::span<const float> h,
                                     std::uint64_t& macs);

}  // namespace sparsekit
