// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sparsekit {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InternalError : std::logic_error {
  using std::logic_error::logic_error;
};

// File-format violation; carries the byte offset where parsing stopped.
struct FormatError : std::runtime_error {
  FormatError(const std::string& what, std::uint64_t at)
      : std::runtime_error(what + " (offset " + std::to_string(at) + ")"),
        offset(at) {}

  std::uint64_t offset = 0;
};

}  // namespace sparsekit
