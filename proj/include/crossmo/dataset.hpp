// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "crossmo/features.hpp"
#include "crossmo/skeleton.hpp"

namespace crossmo {

enum class GaitKind { kWalk, kRun, kTurnLeft, kTurnRight, kIdle, kRearUp };

inline constexpr GaitKind kAllGaits[] = {GaitKind::kWalk, GaitKind::kRun,  GaitKind::kTurnLeft,
                                         GaitKind::kTurnRight, GaitKind::kIdle, GaitKind::kRearUp};

std::string_view gait_name(GaitKind gait);
std::optional<GaitKind> parse_gait(std::string_view name);

struct SpeciesProfile {
  std::string name;
  BoneLengthVector bones;
  bool biped = false;
};

struct MotionRecord {
  MotionSequence motion;
  std::vector<std::string> captions;
  std::string species_name;
  BoneLengthVector tpose_bone_lengths;

  bool operator==(const MotionRecord&) const = default;
};

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::vector<std::size_t> unseen_test;

  bool operator==(const DatasetSplit&) const = default;
};

/// Open interval (18, 300).
bool admissible_length(std::size_t length);

std::vector<SpeciesProfile> generate_synthetic_species(std::uint64_t seed, std::size_t species_count);

struct GaitOptions {
  /// Per-record uniform scale jitter, a fraction of the species lengths.
  double morph_jitter = 0.08;
};

struct GaitTrajectory {
  GlobalMotion motion;
  BoneLengthVector bones;
};

/// World-space joints of one procedural gait before feature encoding, at
/// full double precision. `generate_gait` with the same arguments encodes
/// exactly this trajectory.
GaitTrajectory generate_gait_trajectory(const SpeciesProfile& species, GaitKind gait, std::size_t length,
                                        std::uint64_t seed, const GaitOptions& options = {});

/// One procedural, rigid-bone motion of `species`. Frame values are rounded
/// to float precision so records survive the container round trip exactly.
MotionRecord generate_gait(const SpeciesProfile& species, GaitKind gait, std::size_t length,
                           std::uint64_t seed, const GaitOptions& options = {});

struct SyntheticDatasetOptions {
  std::uint64_t seed = 0;
  std::size_t species_count = 8;
  std::size_t records_per_pair = 25;
  std::size_t min_length = 32;
  std::size_t max_length = 96;
  GaitOptions gait;
};

std::vector<MotionRecord> generate_dataset(const SyntheticDatasetOptions& options,
                                           std::vector<SpeciesProfile>* species_out = nullptr);

std::vector<MotionRecord> filter_by_length(std::vector<MotionRecord> records);

DatasetSplit make_splits(const std::vector<MotionRecord>& records, const std::set<std::string>& holdout_species,
                         std::uint64_t seed);

struct ContainerContents {
  std::vector<MotionRecord> records;
  SkeletonTopology topology;
  NormStats stats;
};

inline constexpr char kContainerMagic[4] = {'U', 'M', 'O', '4'};
inline constexpr std::uint32_t kContainerVersion = 1;

std::vector<std::uint8_t> serialize_container(const std::vector<MotionRecord>& records, const SkeletonTopology& topo,
                                              const NormStats& stats);
ContainerContents parse_container(std::vector<std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const std::vector<MotionRecord>& records,
                     const SkeletonTopology& topo, const NormStats& stats);
ContainerContents read_container(const std::filesystem::path& path);

struct SplitManifest {
  std::string container;
  std::uint64_t split_seed = 0;
  std::vector<std::string> holdout_species;
  DatasetSplit split;
};

/// JSON document mapping record id to split name.
std::string manifest_to_json(const SplitManifest& manifest, std::size_t record_count);
SplitManifest manifest_from_json(std::string_view text);

}  // namespace crossmo
