// SPDX-License-Identifier: Apache-2.0

#include "crossmo/checkpoint.hpp"

#include "crossmo/binary_io.hpp"
#include "crossmo/errors.hpp"

namespace crossmo {
namespace {

using Kind = ParseError::Kind;

// Shapes above this are certainly corruption rather than a real model.
constexpr std::uint32_t kMaxDim = 1u << 24;

void write_values(io::ByteWriter& w, const Matrix& m) {
  for (double v : m.data) w.f64(v);
}

Matrix read_values(io::ByteReader& r, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = r.f64();
  return m;
}

void write_block(io::ByteWriter& w, const ParamBlock& b) {
  w.i64(b.stage_steps);
  w.u32(static_cast<std::uint32_t>(b.values.size()));
  for (const auto& [name, m] : b.values) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(m.rows));
    w.u32(static_cast<std::uint32_t>(m.cols));
    write_values(w, m);
  }
  w.u8(b.adam ? 1 : 0);
  if (!b.adam) return;
  if (b.adam->m.size() != b.values.size() || b.adam->v.size() != b.values.size())
    throw InvalidInput("optimizer state does not match its parameter block");
  w.i64(b.adam->step);
  for (std::size_t i = 0; i < b.values.size(); ++i) {
    if (b.adam->m[i].rows != b.values[i].second.rows || b.adam->m[i].cols != b.values[i].second.cols)
      throw InvalidInput("optimizer moment shape mismatch for " + b.values[i].first);
    write_values(w, b.adam->m[i]);
  }
  for (std::size_t i = 0; i < b.values.size(); ++i) {
    if (b.adam->v[i].rows != b.values[i].second.rows || b.adam->v[i].cols != b.values[i].second.cols)
      throw InvalidInput("optimizer moment shape mismatch for " + b.values[i].first);
    write_values(w, b.adam->v[i]);
  }
}

std::uint8_t read_flag(io::ByteReader& r) {
  const std::uint8_t f = r.u8();
  if (f > 1) throw ParseError(Kind::kMalformed, "checkpoint presence flag is not 0/1");
  return f;
}

ParamBlock read_block(io::ByteReader& r) {
  ParamBlock b;
  b.stage_steps = r.i64();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows > kMaxDim || cols > kMaxDim) throw ParseError(Kind::kMalformed, "implausible parameter shape");
    if (static_cast<std::uint64_t>(rows) * cols * 8 > r.remaining())
      throw ParseError(Kind::kTruncated, "parameter " + name + " runs past the end of the checkpoint");
    b.values.emplace_back(std::move(name), read_values(r, rows, cols));
  }
  if (read_flag(r)) {
    optim::AdamState s;
    s.step = r.i64();
    for (const auto& [name, m] : b.values) s.m.push_back(read_values(r, m.rows, m.cols));
    for (const auto& [name, m] : b.values) s.v.push_back(read_values(r, m.rows, m.cols));
    b.adam = std::move(s);
  }
  return b;
}

}  // namespace

const char* module_name(ModuleId id) {
  switch (id) {
    case ModuleId::kCgae: return "cgae";
    case ModuleId::kAe: return "ae";
    case ModuleId::kMcm: return "mcm";
    case ModuleId::kGenerator: return "generator";
    case ModuleId::kMatcher: return "matcher";
  }
  return "?";
}

ParamBlock capture_params(const nn::ParamSet& params, std::int64_t stage_steps, const optim::AdamState* adam) {
  ParamBlock b;
  b.stage_steps = stage_steps;
  for (const auto& e : params.entries()) b.values.emplace_back(e.name, e.tensor.value());
  if (adam && adam->step > 0) b.adam = *adam;
  return b;
}

void restore_params(const ParamBlock& block, nn::ParamSet& params) {
  auto& entries = params.entries();
  if (entries.size() != block.values.size())
    throw ShapeMismatch("checkpoint block has " + std::to_string(block.values.size()) + " parameters, model has " +
                        std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, m] = block.values[i];
    Matrix& dst = entries[i].tensor.mutable_value();
    if (name != entries[i].name) throw ShapeMismatch("checkpoint parameter " + name + " where model expects " + entries[i].name);
    if (m.rows != dst.rows || m.cols != dst.cols) throw ShapeMismatch("checkpoint parameter " + name + " has the wrong shape");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].tensor.mutable_value() = block.values[i].second;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.str(ckpt.config_json);
  w.i64(ckpt.step);
  for (const auto& block : ckpt.modules) {
    w.u8(block ? 1 : 0);
    if (block) write_block(w, *block);
  }
  w.u8(ckpt.norm_stats ? 1 : 0);
  if (ckpt.norm_stats) {
    for (double v : ckpt.norm_stats->mean) w.f64(v);
    for (double v : ckpt.norm_stats->std) w.f64(v);
  }
  w.u8(ckpt.latent_stats ? 1 : 0);
  if (ckpt.latent_stats) {
    const auto& ls = *ckpt.latent_stats;
    if (ls.mean.size() != ls.std.size()) throw InvalidInput("latent stats mean/std widths differ");
    w.u32(static_cast<std::uint32_t>(ls.mean.size()));
    for (double v : ls.mean) w.f64(v);
    for (double v : ls.std) w.f64(v);
  }
  return w.bytes();
}

Checkpoint parse_checkpoint(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.remaining() < 4 || r.raw(4) != std::string_view(kCheckpointMagic, 4))
    throw ParseError(Kind::kMagicMismatch, "not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw ParseError(Kind::kVersionMismatch, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_json = r.str();
  c.step = r.i64();
  for (auto& block : c.modules)
    if (read_flag(r)) block = read_block(r);
  if (read_flag(r)) {
    NormStats s;
    for (double& v : s.mean) v = r.f64();
    for (double& v : s.std) v = r.f64();
    c.norm_stats = s;
  }
  if (read_flag(r)) {
    ae::LatentStats ls;
    const std::uint32_t d = r.u32();
    if (d > kMaxDim) throw ParseError(Kind::kMalformed, "implausible latent width");
    ls.mean.resize(d);
    ls.std.resize(d);
    for (double& v : ls.mean) v = r.f64();
    for (double& v : ls.std) v = r.f64();
    c.latent_stats = std::move(ls);
  }
  if (!r.at_end()) throw ParseError(Kind::kMalformed, "trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(io::read_file(path)); }

}  // namespace crossmo
