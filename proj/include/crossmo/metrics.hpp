// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "crossmo/autograd.hpp"
#include "crossmo/features.hpp"
#include "crossmo/nn.hpp"
#include "crossmo/rng.hpp"

namespace crossmo::metrics {

/// Mean absolute per-frame, per-bone deviation from `bones`, in metres.
double mme(const MotionSequence& seq, const BoneLengthVector& bones, const SkeletonTopology& topo);

struct GaussianStats {
  std::vector<double> mean;
  Matrix cov;
};

/// Sample mean and unbiased covariance of the rows.
GaussianStats fit_gaussian(const Matrix& feats);

inline constexpr double kFidRegularizer = 1e-6;

/// Frechet distance between two Gaussians, used as given. The trace of
/// sqrt(S_a S_b) is taken through the symmetric product S_a^{1/2} S_b S_a^{1/2}.
/// Clamped at 0.
double fid_from_stats(const GaussianStats& a, const GaussianStats& b);
/// Fits both feature sets and adds kFidRegularizer * I to each sample
/// covariance, which may be singular for small batches.
double fid(const Matrix& feats_a, const Matrix& feats_b);

/// Fraction of anchors whose true motion ranks within the top k among
/// `pool_size` candidates (true + random distractors) by Euclidean distance
/// to the anchor text. Ties go to the true motion.
double r_precision(const Matrix& motion_feats, const Matrix& text_feats, std::size_t k, Rng& rng,
                   std::size_t pool_size = 32);
/// Top-1..top-k in one pass over the same distractor draws.
std::vector<double> r_precision_curve(const Matrix& motion_feats, const Matrix& text_feats, std::size_t max_k, Rng& rng,
                                      std::size_t pool_size = 32);

double mm_dist(const Matrix& motion_feats, const Matrix& text_feats);

/// Mean distance over `num_pairs` disjoint random pairs.
double diversity(const Matrix& feats, std::size_t num_pairs, Rng& rng);
double diversity(const Matrix& feats, const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

/// Symmetric in-batch cross-entropy over cosine similarities / temperature.
ad::Tensor contrastive_loss(const ad::Tensor& motion, const ad::Tensor& text, double temperature);

struct MatcherConfig {
  std::size_t hidden = 128;
  std::size_t feature_dim = 64;
  std::size_t text_dim = 64;
  double temperature = 0.07;
};

/// Toy text-motion matcher: a per-frame MLP mean-pooled over time for
/// motions, an MLP over the sentence feature for captions, both projected to
/// unit vectors in a shared space.
class Matcher {
 public:
  Matcher(const MatcherConfig& config, std::uint64_t seed);

  const MatcherConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  const NormStats& stats() const { return stats_; }
  void set_stats(const NormStats& s) { stats_ = s; }

  /// Packed normalised frames -> one unit row per segment.
  ad::Tensor encode_motion(const ad::Tensor& frames, const ad::Segments& segs) const;
  /// Sentence features (n x text_dim) -> unit rows.
  ad::Tensor encode_text(const ad::Tensor& sentences) const;

  Matrix motion_features(const std::vector<MotionSequence>& raw) const;
  Matrix text_features(const Matrix& sentences) const;

 private:
  MatcherConfig config_;
  nn::ParamSet params_;
  NormStats stats_;
  nn::Linear m1_, m2_, m3_, t1_, t2_;
};

}  // namespace crossmo::metrics
