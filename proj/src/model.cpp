// Copyright (c) 2026 The moe-sparsekit Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparsekit/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "sparsekit/rng.hpp"

namespace sparsekit {

namespace {

constexpr char kMagic[4] = {'M', 'O', 'E', '1'};
constexpr std::uint64_t kHeaderBytes = 4 + 6 * 4;

void fill_uniform(Matrix& m, SplitMix64& rng, float scale) {
  for (float& v : m.data) {
    v = rng.next_symmetric(scale);
  }
}

std::uint64_t matrix_bytes(int rows, int cols) {
  return static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) *
         sizeof(float);
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path)
      : out_(path, std::ios::binary) {
    if (!out_) {
      throw IoError("cannot open for writing: " + path.string());
    }
  }

  void put_u32(std::uint32_t v) {
    unsigned char b[4];
    b[0] = static_cast<unsigned char>(v & 0xff);
    b[1] = static_cast<unsigned char>((v >> 8) & 0xff);
    b[2] = static_cast<unsigned char>((v >> 16) & 0xff);
    b[3] = static_cast<unsigned char>((v >> 24) & 0xff);
    out_.write(reinterpret_cast<const char*>(b), 4);
  }

  void put_matrix(const Matrix& m) {
    for (float v : m.data) {
      put_u32(std::bit_cast<std::uint32_t>(v));
    }
  }

  void put_raw(const char* p, std::size_t n) { out_.write(p, n); }

  void close() {
    out_.close();
    if (!out_) {
      throw IoError("write failed");
    }
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path)
      : in_(path, std::ios::binary) {
    if (!in_) {
      throw IoError("cannot open for reading: " + path.string());
    }
  }

  std::uint64_t offset() const { return offset_; }

  std::uint32_t get_u32() {
    unsigned char b[4];
    read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }

  void get_matrix(Matrix& m) {
    for (float& v : m.data) {
      v = std::bit_cast<float>(get_u32());
    }
  }

  void read(char* p, std::size_t n) {
    in_.read(p, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError("truncated file", offset_);
    }
    offset_ += n;
  }

  bool at_eof() {
    return in_.peek() == std::char_traits<char>::eof();
  }

 private:
  std::ifstream in_;
  std::uint64_t offset_ = 0;
};

}  // namespace

void MoEConfig::validate() const {
  if (n_experts < 1) throw ConfigError("n_experts must be >= 1");
  if (top_k < 1 || top_k > n_experts) {
    throw ConfigError("top_k must satisfy 1 <= K <= E, got K=" +
                      std::to_string(top_k) + " E=" +
                      std::to_string(n_experts));
  }
  if (d_model < 1) throw ConfigError("d_model must be >= 1");
  if (d_ffn < 1) throw ConfigError("d_ffn must be >= 1");
  if (d_shared < 0) throw ConfigError("d_shared must be >= 0");
  if (has_shared != (d_shared > 0)) {
    throw ConfigError("has_shared must match d_shared > 0");
  }
  if (align_block < 1) throw ConfigError("align_block must be >= 1");
}

MoELayerWeights generate_synthetic(const MoEConfig& config, std::uint64_t seed,
                                   float scale) {
  config.validate();
  if (!(scale > 0.0f)) {
    throw ConfigError("scale must be > 0");
  }

  SplitMix64 rng(seed);
  MoELayerWeights w;
  w.config = config;
  w.router = Matrix(config.n_experts, config.d_model);
  fill_uniform(w.router, rng, scale);

  w.gate.reserve(config.n_experts);
  w.up.reserve(config.n_experts);
  w.down_t.reserve(config.n_experts);
  for (int e = 0; e < config.n_experts; ++e) {
    Matrix g(config.d_ffn, config.d_model);
    Matrix u(config.d_ffn, config.d_model);
    Matrix d(config.d_ffn, config.d_model);
    fill_uniform(g, rng, scale);
    fill_uniform(u, rng, scale);
    fill_uniform(d, rng, scale);
    w.gate.push_back(std::move(g));
    w.up.push_back(std::move(u));
    w.down_t.push_back(std::move(d));
  }

  if (config.has_shared) {
    w.shared_gate = Matrix(config.d_shared, config.d_model);
    w.shared_up = Matrix(config.d_shared, config.d_model);
    w.shared_down_t = Matrix(config.d_shared, config.d_model);
    fill_uniform(w.shared_gate, rng, scale);
    fill_uniform(w.shared_up, rng, scale);
    fill_uniform(w.shared_down_t, rng, scale);
  }
  return w;
}

Matrix generate_tokens(int batch, int d_model, std::uint64_t seed) {
  if (batch < 1 || d_model < 1) {
    throw ConfigError("token batch needs batch >= 1 and d_model >= 1");
  }
  SplitMix64 rng(seed);
  Matrix x(batch, d_model);
  for (float& v : x.data) {
    v = static_cast<float>(rng.next_gaussian());
  }
  return x;
}

std::uint64_t weight_file_size(const MoEConfig& config) {
  std::uint64_t n = kHeaderBytes;
  n += matrix_bytes(config.n_experts, config.d_model);
  n += 3ull * config.n_experts * matrix_bytes(config.d_ffn, config.d_model);
  if (config.has_shared) {
    n += 3ull * matrix_bytes(config.d_shared, config.d_model);
  }
  return n;
}

void save_weights(const MoELayerWeights& w, const std::filesystem::path& path) {
  w.config.validate();
  Writer out(path);
  out.put_raw(kMagic, 4);
  out.put_u32(static_cast<std::uint32_t>(w.config.n_experts));
  out.put_u32(static_cast<std::uint32_t>(w.config.top_k));
  out.put_u32(static_cast<std::uint32_t>(w.config.d_model));
  out.put_u32(static_cast<std::uint32_t>(w.config.d_ffn));
  out.put_u32(static_cast<std::uint32_t>(w.config.d_shared));
  std::uint32_t flags = 0;
  if (w.config.has_shared) flags |= 1u;
  if (w.config.renormalize) flags |= 2u;
  out.put_u32(flags);

  out.put_matrix(w.router);
  for (int e = 0; e < w.config.n_experts; ++e) {
    out.put_matrix(w.gate[static_cast<std::size_t>(e)]);
    out.put_matrix(w.up[static_cast<std::size_t>(e)]);
    out.put_matrix(w.down_t[static_cast<std::size_t>(e)]);
  }
  if (w.config.has_shared) {
    out.put_matrix(w.shared_gate);
    out.put_matrix(w.shared_up);
    out.put_matrix(w.shared_down_t);
  }
  out.close();
}

MoELayerWeights load_weights(const std::filesystem::path& path) {
  Reader in(path);

  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad magic, expected MOE1", 0);
  }

  MoEConfig cfg;
  const std::uint64_t e_off = in.offset();
  cfg.n_experts = static_cast<int>(in.get_u32());
  const std::uint64_t k_off = in.offset();
  cfg.top_k = static_cast<int>(in.get_u32());
  const std::uint64_t d_off = in.offset();
  cfg.d_model = static_cast<int>(in.get_u32());
  const std::uint64_t n_off = in.offset();
  cfg.d_ffn = static_cast<int>(in.get_u32());
  cfg.d_shared = static_cast<int>(in.get_u32());
  const std::uint32_t flags = in.get_u32();
  cfg.has_shared = (flags & 1u) != 0;
  cfg.renormalize = (flags & 2u) != 0;

  if (cfg.n_experts < 1) throw FormatError("header: n_experts < 1", e_off);
  if (cfg.top_k < 1 || cfg.top_k > cfg.n_experts) {
    throw FormatError("header: top_k outside [1, n_experts]", k_off);
  }
  if (cfg.d_model < 1) throw FormatError("header: d_model < 1", d_off);
  if (cfg.d_ffn < 1) throw FormatError("header: d_ffn < 1", n_off);
  if (cfg.has_shared != (cfg.d_shared > 0)) {
    throw FormatError("header: shared flag disagrees with d_shared", n_off + 4);
  }

  MoELayerWeights w;
  w.config = cfg;
  w.router = Matrix(cfg.n_experts, cfg.d_model);
  in.get_matrix(w.router);

  w.gate.reserve(cfg.n_experts);
  w.up.reserve(cfg.n_experts);
  w.down_t.reserve(cfg.n_experts);
  for (int e = 0; e < cfg.n_experts; ++e) {
    Matrix g(cfg.d_ffn, cfg.d_model);
    Matrix u(cfg.d_ffn, cfg.d_model);
    Matrix d(cfg.d_ffn, cfg.d_model);
    in.get_matrix(g);
    in.get_matrix(u);
    in.get_matrix(d);
    w.gate.push_back(std::move(g));
    w.up.push_back(std::move(u));
    w.down_t.push_back(std::move(d));
  }
  if (cfg.has_shared) {
    w.shared_gate = Matrix(cfg.d_shared, cfg.d_model);
    w.shared_up = Matrix(cfg.d_shared, cfg.d_model);
    w.shared_down_t = Matrix(cfg.d_shared, cfg.d_model);
    in.get_matrix(w.shared_gate);
    in.get_matrix(w.shared_up);
    in.get_matrix(w.shared_down_t);
  }
  if (!in.at_eof()) {
    throw FormatError("trailing bytes after weight payload", in.offset());
  }
  return w;
}

}  // namespace sparsekit
