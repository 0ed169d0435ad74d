// SPDX-License-Identifier: Apache-2.0
#pragma once

// The unified 25-joint skeleton shared by every species. Joint layout:
//   0 pelvis, 1-3 spine, 4 neck, 5 head,
//   6-9 left leg (hip, knee, ankle, foot), 10-13 right leg,
//   14-17 left arm / foreleg (scapula, shoulder, elbow, wrist), 18-21 right,
//   22-24 tail chain hanging off the pelvis.
// Bone e connects parent_index[e + 1] to joint e + 1.

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace crossmo {

inline constexpr std::size_t kNumJoints = 25;
inline constexpr std::size_t kNumBones = 24;
inline constexpr std::size_t kTailBones[3] = {21, 22, 23};

using Vec3 = std::array<double, 3>;
/// One posed skeleton, 25 joint positions.
using Frame = std::array<Vec3, kNumJoints>;

struct SkeletonTopology {
  std::vector<std::string> joint_names;
  std::vector<int> parent_index;
  std::vector<std::pair<int, int>> bone_edges;
  std::vector<Vec3> bone_directions;
};

/// 24 nonnegative bone lengths in metres, ordered as bone_edges.
struct BoneLengthVector {
  std::array<double, kNumBones> lengths{};

  double& operator[](std::size_t i) { return lengths[i]; }
  double operator[](std::size_t i) const { return lengths[i]; }
  bool operator==(const BoneLengthVector&) const = default;
};

/// Canonical rest pose; root at the origin.
struct TPose {
  Frame joints{};
};

/// Virtual joints for skeletons that lack them (tails on bipeds) are placed
/// on the pelvis after mapping.
struct JointMapping {
  std::vector<std::pair<std::size_t, std::size_t>> source_to_unified;
  std::vector<std::size_t> virtual_joints;
};

const SkeletonTopology& canonical_topology();

/// Throws InvalidInput unless the topology is a 25-joint single-rooted tree
/// with unit bone directions.
void validate_topology(const SkeletonTopology& topo);

BoneLengthVector extract_bone_lengths(const TPose& tpose, const SkeletonTopology& topo);
TPose forward_kinematics_tpose(const BoneLengthVector& lengths, const SkeletonTopology& topo);
BoneLengthVector frame_bone_lengths(const Frame& joints, const SkeletonTopology& topo);

/// Copies mapped joints into the unified layout scaled by `scale`; virtual
/// joints land on the (scaled) pelvis.
std::vector<Frame> retarget_to_unified(const std::vector<std::vector<Vec3>>& source_frames,
                                       const JointMapping& mapping, double scale);

Vec3 rotate_y(const Vec3& v, double angle);

}  // namespace crossmo
