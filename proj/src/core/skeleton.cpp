// SPDX-License-Identifier: Apache-2.0

#include "crossmo/skeleton.hpp"

#include <cmath>
#include <string>

#include "crossmo/errors.hpp"

namespace crossmo {
namespace {

SkeletonTopology build_canonical() {
  SkeletonTopology t;
  t.joint_names = {"pelvis",      "spine1",      "spine2",      "spine3",     "neck",
                   "head",        "l_hip",       "l_knee",      "l_ankle",    "l_foot",
                   "r_hip",       "r_knee",      "r_ankle",     "r_foot",     "l_scapula",
                   "l_shoulder",  "l_elbow",     "l_wrist",     "r_scapula",  "r_shoulder",
                   "r_elbow",     "r_wrist",     "tail1",       "tail2",      "tail3"};
  t.parent_index = {-1, 0, 1, 2, 3, 4, 0, 6, 7, 8, 0, 10, 11, 12, 3, 14, 15, 16, 3, 18, 19, 20, 0, 22, 23};
  const Vec3 up{0, 1, 0}, down{0, -1, 0}, fwd{0, 0, 1}, back{0, 0, -1}, left{-1, 0, 0}, right{1, 0, 0};
  // Hip and scapula bones are lateral so the two limb chains do not overlap.
  t.bone_directions = {up,   up,   up,   up,   up,             // spine, neck, head
                       left, down, down, fwd,                  // left leg
                       right, down, down, fwd,                 // right leg
                       left, left, left, left,                 // left arm
                       right, right, right, right,             // right arm
                       back, back, back};                      // tail
  for (std::size_t j = 1; j < kNumJoints; ++j) t.bone_edges.emplace_back(t.parent_index[j], static_cast<int>(j));
  return t;
}

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void require_finite(const Frame& f) {
  for (const Vec3& p : f)
    for (double v : p)
      if (!std::isfinite(v)) throw InvalidInput("joint coordinates must be finite");
}

}  // namespace

const SkeletonTopology& canonical_topology() {
  static const SkeletonTopology topo = build_canonical();
  return topo;
}

void validate_topology(const SkeletonTopology& topo) {
  if (topo.joint_names.size() != kNumJoints || topo.parent_index.size() != kNumJoints)
    throw InvalidInput("topology must have 25 joints");
  if (topo.bone_edges.size() != kNumBones || topo.bone_directions.size() != kNumBones)
    throw InvalidInput("topology must have 24 bones");
  int roots = 0;
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    const int p = topo.parent_index[j];
    if (p == -1) {
      ++roots;
    } else if (p < 0 || p >= static_cast<int>(kNumJoints) || p == static_cast<int>(j)) {
      throw InvalidInput("invalid parent index at joint " + std::to_string(j));
    }
  }
  if (roots != 1 || topo.parent_index[0] != -1) throw InvalidInput("topology must have a single root at joint 0");
  // Every joint must reach the root without revisiting a joint.
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    int cur = static_cast<int>(j);
    std::size_t hops = 0;
    while (cur != 0) {
      cur = topo.parent_index[static_cast<std::size_t>(cur)];
      if (cur < 0 || ++hops > kNumJoints) throw InvalidInput("topology contains a cycle");
    }
  }
  for (std::size_t e = 0; e < kNumBones; ++e) {
    const auto [p, c] = topo.bone_edges[e];
    if (c < 0 || c >= static_cast<int>(kNumJoints) || topo.parent_index[static_cast<std::size_t>(c)] != p)
      throw InvalidInput("bone edge does not match parent table");
    const Vec3& d = topo.bone_directions[e];
    const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (std::abs(n - 1.0) > 1e-9) throw InvalidInput("bone direction is not unit length");
  }
}

BoneLengthVector frame_bone_lengths(const Frame& joints, const SkeletonTopology& topo) {
  require_finite(joints);
  BoneLengthVector b;
  for (std::size_t e = 0; e < kNumBones; ++e) {
    const auto [p, c] = topo.bone_edges[e];
    b[e] = distance(joints[static_cast<std::size_t>(c)], joints[static_cast<std::size_t>(p)]);
  }
  return b;
}

BoneLengthVector extract_bone_lengths(const TPose& tpose, const SkeletonTopology& topo) {
  return frame_bone_lengths(tpose.joints, topo);
}

TPose forward_kinematics_tpose(const BoneLengthVector& lengths, const SkeletonTopology& topo) {
  for (double l : lengths.lengths) {
    if (!std::isfinite(l)) throw InvalidInput("bone length must be finite");
    if (l < 0) throw InvalidInput("bone length must be nonnegative");
  }
  TPose pose;
  // Parents precede children in the canonical ordering; fall back to a
  // fixed-point sweep for arbitrary orderings.
  std::array<bool, kNumJoints> done{};
  done[0] = true;
  std::size_t placed = 1;
  while (placed < kNumJoints) {
    std::size_t before = placed;
    for (std::size_t e = 0; e < kNumBones; ++e) {
      const auto p = static_cast<std::size_t>(topo.bone_edges[e].first);
      const auto c = static_cast<std::size_t>(topo.bone_edges[e].second);
      if (done[c] || !done[p]) continue;
      for (int k = 0; k < 3; ++k) pose.joints[c][k] = pose.joints[p][k] + lengths[e] * topo.bone_directions[e][k];
      done[c] = true;
      ++placed;
    }
    if (placed == before) throw InvalidInput("topology is not connected");
  }
  return pose;
}

std::vector<Frame> retarget_to_unified(const std::vector<std::vector<Vec3>>& source_frames,
                                       const JointMapping& mapping, double scale) {
  if (!(scale > 0) || !std::isfinite(scale)) throw InvalidInput("retarget scale must be positive");
  std::array<int, kNumJoints> src_of;
  src_of.fill(-1);
  std::array<bool, kNumJoints> is_virtual{};
  for (const auto& [src, dst] : mapping.source_to_unified) {
    if (dst >= kNumJoints) throw InvalidInput("unified joint index out of range");
    src_of[dst] = static_cast<int>(src);
  }
  for (std::size_t v : mapping.virtual_joints) {
    if (v >= kNumJoints) throw InvalidInput("virtual joint index out of range");
    if (v == 0) throw InvalidInput("the pelvis cannot be virtual");
    is_virtual[v] = true;
  }
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    if (src_of[j] < 0 && !is_virtual[j])
      throw MappingIncomplete("unified joint " + canonical_topology().joint_names[j] + " is neither mapped nor virtual");
  }

  std::vector<Frame> out;
  out.reserve(source_frames.size());
  for (const auto& src : source_frames) {
    Frame f{};
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      if (src_of[j] < 0) continue;
      const auto s = static_cast<std::size_t>(src_of[j]);
      if (s >= src.size()) throw InvalidInput("source joint index out of range");
      for (int k = 0; k < 3; ++k) {
        if (!std::isfinite(src[s][k])) throw InvalidInput("source coordinates must be finite");
        f[j][k] = src[s][k] * scale;
      }
    }
    for (std::size_t j = 0; j < kNumJoints; ++j)
      if (src_of[j] < 0) f[j] = f[0];
    out.push_back(f);
  }
  return out;
}

Vec3 rotate_y(const Vec3& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]};
}

}  // namespace crossmo
