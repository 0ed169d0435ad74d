// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "crossmo/errors.hpp"
#include "crossmo/rng.hpp"
#include "crossmo/skeleton.hpp"
#include "doctest.h"

using namespace crossmo;

namespace {

BoneLengthVector random_lengths(Rng& rng) {
  BoneLengthVector b;
  for (double& v : b.lengths) v = rng.uniform(0.0, 0.8);
  return b;
}

double norm3(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

// Rotates every joint about an arbitrary axis then translates.
Frame rigid(const Frame& f, double ax, double ay, double tx) {
  Frame out;
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    Vec3 p = rotate_y(f[j], ay);
    const double c = std::cos(ax), s = std::sin(ax);
    out[j] = {p[0] + tx, c * p[1] - s * p[2], s * p[1] + c * p[2] - 2 * tx};
  }
  return out;
}

}  // namespace

TEST_CASE("canonical topology shape") {
  const auto& t = canonical_topology();
  CHECK(t.joint_names.size() == 25);
  CHECK(t.bone_edges.size() == 24);
  CHECK(t.parent_index[0] == -1);
  CHECK(t.parent_index[22] == 0);
  CHECK(t.parent_index[23] == 22);
  CHECK(t.parent_index[24] == 23);
  for (const Vec3& d : t.bone_directions) CHECK(std::abs(norm3(d) - 1.0) <= 1e-9);
  CHECK_NOTHROW(validate_topology(t));

  // DFS from the root reaches every joint exactly once.
  std::vector<int> visits(kNumJoints, 0);
  std::vector<int> stack = {0};
  while (!stack.empty()) {
    const int j = stack.back();
    stack.pop_back();
    ++visits[static_cast<std::size_t>(j)];
    for (std::size_t c = 1; c < kNumJoints; ++c)
      if (t.parent_index[c] == j) stack.push_back(static_cast<int>(c));
  }
  for (int v : visits) CHECK(v == 1);
}

TEST_CASE("validate_topology rejects broken trees") {
  SkeletonTopology t = canonical_topology();
  t.parent_index[5] = 5;
  CHECK_THROWS_AS(validate_topology(t), InvalidInput);
  t = canonical_topology();
  t.bone_directions[3] = {0.0, 2.0, 0.0};
  CHECK_THROWS_AS(validate_topology(t), InvalidInput);
}

TEST_CASE("forward kinematics and extraction round trip") {
  const auto& topo = canonical_topology();
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto b = random_lengths(rng);
    const auto back = extract_bone_lengths(forward_kinematics_tpose(b, topo), topo);
    for (std::size_t e = 0; e < kNumBones; ++e) CHECK(std::abs(back[e] - b[e]) <= 1e-9);
  }
}

TEST_CASE("forward kinematics edge cases") {
  const auto& topo = canonical_topology();
  BoneLengthVector zero;
  const TPose collapsed = forward_kinematics_tpose(zero, topo);
  for (const Vec3& p : collapsed.joints) CHECK(norm3(p) == 0.0);

  BoneLengthVector spine;
  spine[0] = 1.0;
  const TPose one = forward_kinematics_tpose(spine, topo);
  CHECK(one.joints[1] == topo.bone_directions[0]);
  for (std::size_t j = 2; j <= 5; ++j) CHECK(one.joints[j] == topo.bone_directions[0]);
  CHECK(norm3(one.joints[6]) == 0.0);

  BoneLengthVector neg;
  neg[4] = -0.1;
  CHECK_THROWS_AS(forward_kinematics_tpose(neg, topo), InvalidInput);
}

TEST_CASE("extraction on a uniform chain and a human-style tail") {
  const auto& topo = canonical_topology();
  BoneLengthVector half;
  half.lengths.fill(0.5);
  for (double v : extract_bone_lengths(forward_kinematics_tpose(half, topo), topo).lengths) CHECK(v == doctest::Approx(0.5));

  Rng rng(9);
  auto b = random_lengths(rng);
  for (std::size_t e : kTailBones) b[e] = 0.0;
  const auto got = extract_bone_lengths(forward_kinematics_tpose(b, topo), topo);
  for (std::size_t e : kTailBones) CHECK(got[e] == 0.0);

  TPose bad = forward_kinematics_tpose(b, topo);
  bad.joints[7][1] = std::nan("");
  CHECK_THROWS_AS(extract_bone_lengths(bad, topo), InvalidInput);
}

TEST_CASE("extraction matches a direct per-edge oracle on random poses") {
  const auto& topo = canonical_topology();
  Rng rng(21);
  TPose p;
  for (auto& j : p.joints)
    for (double& v : j) v = rng.normal();
  const auto got = extract_bone_lengths(p, topo);
  for (std::size_t e = 0; e < kNumBones; ++e) {
    const auto& a = p.joints[static_cast<std::size_t>(topo.parent_index[e + 1])];
    const auto& c = p.joints[e + 1];
    const double d = std::sqrt((a[0] - c[0]) * (a[0] - c[0]) + (a[1] - c[1]) * (a[1] - c[1]) + (a[2] - c[2]) * (a[2] - c[2]));
    CHECK(got[e] == doctest::Approx(d).epsilon(1e-14));
  }
}

TEST_CASE("bone lengths are invariant to rigid transforms and subtree rotations") {
  const auto& topo = canonical_topology();
  Rng rng(4);
  const auto b = random_lengths(rng);
  const Frame rest = forward_kinematics_tpose(b, topo).joints;
  const auto moved = frame_bone_lengths(rigid(rest, 0.7, -1.3, 0.4), topo);
  for (std::size_t e = 0; e < kNumBones; ++e) CHECK(std::abs(moved[e] - b[e]) <= 1e-9);

  // Bend the left knee: rotate the subtree below joint 7 about x through joint 7.
  Frame bent = rest;
  const Vec3 pivot = rest[7];
  const double c = std::cos(0.9), s = std::sin(0.9);
  for (std::size_t j : {8u, 9u}) {
    const double y = rest[j][1] - pivot[1], z = rest[j][2] - pivot[2];
    bent[j] = {rest[j][0], pivot[1] + c * y - s * z, pivot[2] + s * y + c * z};
  }
  const auto after = frame_bone_lengths(bent, topo);
  for (std::size_t e = 0; e < kNumBones; ++e) CHECK(std::abs(after[e] - b[e]) <= 1e-9);
}

TEST_CASE("retargeting copies, scales and fills virtual joints") {
  const auto& topo = canonical_topology();
  Rng rng(8);
  const Frame rest = forward_kinematics_tpose(random_lengths(rng), topo).joints;
  std::vector<Vec3> src(rest.begin(), rest.end());
  for (auto& p : src) p[0] += 0.3;

  JointMapping identity;
  for (std::size_t j = 0; j < kNumJoints; ++j) identity.source_to_unified.emplace_back(j, j);
  const auto same = retarget_to_unified({src}, identity, 1.0);
  for (std::size_t j = 0; j < kNumJoints; ++j) CHECK(same[0][j] == src[j]);

  const auto doubled = retarget_to_unified({src}, identity, 2.0);
  const auto b1 = frame_bone_lengths(same[0], topo), b2 = frame_bone_lengths(doubled[0], topo);
  for (std::size_t e = 0; e < kNumBones; ++e) CHECK(b2[e] == doctest::Approx(2.0 * b1[e]));

  JointMapping human;
  for (std::size_t j = 0; j < 22; ++j) human.source_to_unified.emplace_back(j, j);
  human.virtual_joints = {22, 23, 24};
  const std::vector<Vec3> no_tail(src.begin(), src.begin() + 22);
  const auto out = retarget_to_unified({no_tail}, human, 1.0);
  for (std::size_t j : {22u, 23u, 24u}) CHECK(out[0][j] == out[0][0]);
  const auto tail = frame_bone_lengths(out[0], topo);
  for (std::size_t e : kTailBones) CHECK(tail[e] == 0.0);

  JointMapping partial = human;
  partial.virtual_joints = {22, 23};
  CHECK_THROWS_AS(retarget_to_unified({no_tail}, partial, 1.0), MappingIncomplete);
  CHECK_THROWS_AS(retarget_to_unified({no_tail}, human, 0.0), InvalidInput);
}
