// SPDX-License-Identifier: Apache-2.0
#pragma once

// Unified checkpoint container. Layout (little-endian):
//
//   "CXCK" | u32 version | str config_json | i64 step
//   5 x module block, in the order cgae, ae, mcm, generator, matcher:
//     u8 present
//     [i64 stage_steps | u32 n | n x (str name | u32 rows | u32 cols | f64...)
//      | u8 has_adam | [i64 adam_step | n x (f64 m...) | n x (f64 v...)]]
//   u8 has_norm_stats   | [76 f64 mean | 76 f64 std]
//   u8 has_latent_stats | [u32 d | d f64 mean | d f64 std]
//
// Encoding is canonical, so save -> load -> save reproduces the same bytes.
// The generator block carries its null-text parameters.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crossmo/features.hpp"
#include "crossmo/motion_ae.hpp"
#include "crossmo/nn.hpp"
#include "crossmo/optim.hpp"

namespace crossmo {

enum class ModuleId : std::size_t { kCgae = 0, kAe, kMcm, kGenerator, kMatcher };
inline constexpr std::size_t kModuleCount = 5;

const char* module_name(ModuleId id);

struct ParamBlock {
  std::int64_t stage_steps = 0;
  std::vector<std::pair<std::string, Matrix>> values;
  std::optional<optim::AdamState> adam;

  bool operator==(const ParamBlock&) const = default;
};

ParamBlock capture_params(const nn::ParamSet& params, std::int64_t stage_steps, const optim::AdamState* adam);
/// Copies values into `params`; names and shapes must match exactly.
void restore_params(const ParamBlock& block, nn::ParamSet& params);

inline constexpr char kCheckpointMagic[4] = {'C', 'X', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_json;
  std::int64_t step = 0;
  std::array<std::optional<ParamBlock>, kModuleCount> modules;
  std::optional<NormStats> norm_stats;
  std::optional<ae::LatentStats> latent_stats;

  std::optional<ParamBlock>& module(ModuleId id) { return modules[static_cast<std::size_t>(id)]; }
  const std::optional<ParamBlock>& module(ModuleId id) const { return modules[static_cast<std::size_t>(id)]; }

  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::vector<std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace crossmo
