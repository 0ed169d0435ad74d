// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-frame motion features (76 wide):
//   [0]      root yaw velocity (rad/frame, about +y)
//   [1..2]   root planar velocity (x, z) in the yaw-aligned root frame
//   [3]      root height (world y)
//   [4..75]  joints 1..24 relative to the root's ground projection, rotated
//            into the root's yaw frame. The root itself sits at (0, h, 0).

#include <array>
#include <cstddef>
#include <vector>

#include "crossmo/autograd.hpp"
#include "crossmo/matrix.hpp"
#include "crossmo/skeleton.hpp"

namespace crossmo {

inline constexpr std::size_t kFeatureDim = kNumJoints * 3 + 1;
inline constexpr std::size_t kRootDims = 4;
static_assert(kFeatureDim == 76);

struct MotionSequence {
  Matrix frames;  // L x 76

  MotionSequence() = default;
  explicit MotionSequence(Matrix f);
  std::size_t length() const { return frames.rows; }
  bool operator==(const MotionSequence&) const = default;
};

struct GlobalMotion {
  std::vector<Frame> joints_world;
  std::vector<double> root_yaw;

  std::size_t length() const { return joints_world.size(); }
};

struct NormStats {
  std::array<double, kFeatureDim> mean{};
  std::array<double, kFeatureDim> std{};

  bool operator==(const NormStats&) const = default;
};

inline constexpr double kStdFloor = 1e-6;

MotionSequence encode_features(const GlobalMotion& motion, const SkeletonTopology& topo);
GlobalMotion decode_to_global(const MotionSequence& seq, double initial_yaw, std::array<double, 2> initial_xz);

/// The 25 joints of frame t in the root-local frame.
Frame local_frame(const MotionSequence& seq, std::size_t t);

/// L x 24 bone lengths of every frame.
Matrix bone_lengths_per_frame(const MotionSequence& seq, const SkeletonTopology& topo);

NormStats compute_norm_stats(const std::vector<MotionSequence>& dataset);
MotionSequence normalize(const MotionSequence& seq, const NormStats& stats);
MotionSequence denormalize(const MotionSequence& seq, const NormStats& stats);
/// Identity statistics (mean 0, std 1).
NormStats identity_stats();

/// Differentiable per-frame bone lengths of an N x 76 feature matrix. When
/// `stats` is given the input is taken as normalised and denormalised first.
ad::Tensor bone_lengths_op(const ad::Tensor& features, const NormStats* stats, const SkeletonTopology& topo);

}  // namespace crossmo
