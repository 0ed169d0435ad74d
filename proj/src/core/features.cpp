// SPDX-License-Identifier: Apache-2.0

#include "crossmo/features.hpp"

#include <cmath>

#include "crossmo/errors.hpp"

namespace crossmo {

MotionSequence::MotionSequence(Matrix f) : frames(std::move(f)) {
  if (frames.cols != kFeatureDim) throw ShapeMismatch("motion frames must be 76 wide");
}

MotionSequence encode_features(const GlobalMotion& motion, const SkeletonTopology& topo) {
  (void)topo;
  const std::size_t L = motion.length();
  if (motion.root_yaw.size() != L) throw ShapeMismatch("encode_features: yaw track length differs");
  if (L < 2) throw TooShort("encode_features: need at least 2 frames");
  Matrix f(L, kFeatureDim);
  for (std::size_t t = 0; t < L; ++t) {
    const std::size_t nxt = t + 1 < L ? t + 1 : t;
    const std::size_t cur = t + 1 < L ? t : t - 1;  // last frame repeats the previous velocity
    const Frame& a = motion.joints_world[cur];
    const Frame& b = motion.joints_world[nxt];
    const double yaw = motion.root_yaw[cur];
    f(t, 0) = motion.root_yaw[nxt] - motion.root_yaw[cur];
    const Vec3 v = rotate_y({b[0][0] - a[0][0], 0.0, b[0][2] - a[0][2]}, -yaw);
    f(t, 1) = v[0];
    f(t, 2) = v[2];
    const Frame& w = motion.joints_world[t];
    f(t, 3) = w[0][1];
    for (std::size_t j = 1; j < kNumJoints; ++j) {
      const Vec3 local = rotate_y({w[j][0] - w[0][0], w[j][1], w[j][2] - w[0][2]}, -motion.root_yaw[t]);
      for (int k = 0; k < 3; ++k) f(t, kRootDims + 3 * (j - 1) + k) = local[k];
    }
  }
  for (double v : f.data)
    if (!std::isfinite(v)) throw InvalidInput("encode_features: non-finite input");
  return MotionSequence(std::move(f));
}

GlobalMotion decode_to_global(const MotionSequence& seq, double initial_yaw, std::array<double, 2> initial_xz) {
  const std::size_t L = seq.length();
  GlobalMotion g;
  g.joints_world.resize(L);
  g.root_yaw.resize(L);
  double yaw = initial_yaw;
  double rx = initial_xz[0], rz = initial_xz[1];
  for (std::size_t t = 0; t < L; ++t) {
    if (t > 0) {
      const double prev_yaw = g.root_yaw[t - 1];
      const Vec3 d = rotate_y({seq.frames(t - 1, 1), 0.0, seq.frames(t - 1, 2)}, prev_yaw);
      rx += d[0];
      rz += d[2];
      yaw = prev_yaw + seq.frames(t - 1, 0);
    }
    g.root_yaw[t] = yaw;
    Frame& w = g.joints_world[t];
    w[0] = {rx, seq.frames(t, 3), rz};
    for (std::size_t j = 1; j < kNumJoints; ++j) {
      const std::size_t c = kRootDims + 3 * (j - 1);
      const Vec3 p = rotate_y({seq.frames(t, c), seq.frames(t, c + 1), seq.frames(t, c + 2)}, yaw);
      w[j] = {p[0] + rx, p[1], p[2] + rz};
    }
  }
  return g;
}

Frame local_frame(const MotionSequence& seq, std::size_t t) {
  Frame f{};
  f[0] = {0.0, seq.frames(t, 3), 0.0};
  for (std::size_t j = 1; j < kNumJoints; ++j) {
    const std::size_t c = kRootDims + 3 * (j - 1);
    f[j] = {seq.frames(t, c), seq.frames(t, c + 1), seq.frames(t, c + 2)};
  }
  return f;
}

Matrix bone_lengths_per_frame(const MotionSequence& seq, const SkeletonTopology& topo) {
  Matrix out(seq.length(), kNumBones);
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const BoneLengthVector b = frame_bone_lengths(local_frame(seq, t), topo);
    for (std::size_t e = 0; e < kNumBones; ++e) out(t, e) = b[e];
  }
  return out;
}

NormStats compute_norm_stats(const std::vector<MotionSequence>& dataset) {
  std::size_t n = 0;
  NormStats s;
  for (const auto& seq : dataset) {
    for (std::size_t t = 0; t < seq.length(); ++t)
      for (std::size_t c = 0; c < kFeatureDim; ++c) s.mean[c] += seq.frames(t, c);
    n += seq.length();
  }
  if (n == 0) throw InvalidInput("compute_norm_stats: empty dataset");
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (const auto& seq : dataset)
    for (std::size_t t = 0; t < seq.length(); ++t)
      for (std::size_t c = 0; c < kFeatureDim; ++c) {
        const double d = seq.frames(t, c) - s.mean[c];
        s.std[c] += d * d;
      }
  for (double& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(n)), kStdFloor);
  return s;
}

MotionSequence normalize(const MotionSequence& seq, const NormStats& stats) {
  Matrix f = seq.frames;
  for (std::size_t t = 0; t < f.rows; ++t)
    for (std::size_t c = 0; c < kFeatureDim; ++c) f(t, c) = (f(t, c) - stats.mean[c]) / stats.std[c];
  return MotionSequence(std::move(f));
}

MotionSequence denormalize(const MotionSequence& seq, const NormStats& stats) {
  Matrix f = seq.frames;
  for (std::size_t t = 0; t < f.rows; ++t)
    for (std::size_t c = 0; c < kFeatureDim; ++c) f(t, c) = f(t, c) * stats.std[c] + stats.mean[c];
  return MotionSequence(std::move(f));
}

NormStats identity_stats() {
  NormStats s;
  s.std.fill(1.0);
  return s;
}

ad::Tensor bone_lengths_op(const ad::Tensor& features, const NormStats* stats, const SkeletonTopology& topo) {
  if (features.cols() != kFeatureDim) throw ShapeMismatch("bone_lengths_op: input must be 76 wide");
  const NormStats st = stats ? *stats : identity_stats();
  const std::size_t n = features.rows();
  // Joint positions per row, root at (0, h, 0).
  auto joints = std::make_shared<std::vector<Frame>>(n);
  Matrix out(n, kNumBones);
  const Matrix& x = features.value();
  for (std::size_t r = 0; r < n; ++r) {
    Frame& f = (*joints)[r];
    f[0] = {0.0, x(r, 3) * st.std[3] + st.mean[3], 0.0};
    for (std::size_t j = 1; j < kNumJoints; ++j)
      for (std::size_t k = 0; k < 3; ++k) {
        const std::size_t c = kRootDims + 3 * (j - 1) + k;
        f[j][k] = x(r, c) * st.std[c] + st.mean[c];
      }
    for (std::size_t e = 0; e < kNumBones; ++e) {
      const auto p = static_cast<std::size_t>(topo.bone_edges[e].first);
      const auto c = static_cast<std::size_t>(topo.bone_edges[e].second);
      const double dx = f[c][0] - f[p][0], dy = f[c][1] - f[p][1], dz = f[c][2] - f[p][2];
      out(r, e) = std::sqrt(dx * dx + dy * dy + dz * dz);
    }
  }
  const auto edges = topo.bone_edges;
  return ad::record(std::move(out), {features}, [joints, st, edges](ad::Node& self) {
    Matrix& dx = self.inputs[0]->grad_buffer();
    // column of coordinate k of joint j, or -1 for the fixed root x/z
    auto column = [](std::size_t j, std::size_t k) -> long {
      if (j == 0) return k == 1 ? 3 : -1;
      return static_cast<long>(kRootDims + 3 * (j - 1) + k);
    };
    for (std::size_t r = 0; r < self.grad.rows; ++r) {
      const Frame& f = (*joints)[r];
      for (std::size_t e = 0; e < kNumBones; ++e) {
        const double len = self.value(r, e);
        if (len <= 0.0) continue;  // subgradient 0 at a collapsed bone
        const auto p = static_cast<std::size_t>(edges[e].first);
        const auto c = static_cast<std::size_t>(edges[e].second);
        const double g = self.grad(r, e) / len;
        for (std::size_t k = 0; k < 3; ++k) {
          const double d = g * (f[c][k] - f[p][k]);
          if (long cc = column(c, k); cc >= 0) dx(r, static_cast<std::size_t>(cc)) += d * st.std[static_cast<std::size_t>(cc)];
          if (long pc = column(p, k); pc >= 0) dx(r, static_cast<std::size_t>(pc)) -= d * st.std[static_cast<std::size_t>(pc)];
        }
      }
    }
  });
}

}  // namespace crossmo
