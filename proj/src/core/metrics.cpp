// SPDX-License-Identifier: Apache-2.0

#include "crossmo/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "crossmo/errors.hpp"

namespace crossmo::metrics {
namespace {

double row_distance(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols; ++c) {
    const double d = a(i, c) - b(j, c);
    s += d * d;
  }
  return std::sqrt(s);
}

void require_finite(const Matrix& m, const char* what) {
  if (!all_finite(m)) throw NumericError(std::string(what) + ": non-finite features");
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) e(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m(r, c);
  return e;
}

}  // namespace

double mme(const MotionSequence& seq, const BoneLengthVector& bones, const SkeletonTopology& topo) {
  if (seq.length() == 0) throw InvalidInput("mme: empty sequence");
  const Matrix lens = bone_lengths_per_frame(seq, topo);
  double s = 0.0;
  for (std::size_t t = 0; t < lens.rows; ++t)
    for (std::size_t e = 0; e < kNumBones; ++e) s += std::abs(lens(t, e) - bones[e]);
  return s / static_cast<double>(lens.rows * kNumBones);
}

GaussianStats fit_gaussian(const Matrix& feats) {
  if (feats.rows < 2) throw InvalidInput("fit_gaussian: need at least 2 rows");
  require_finite(feats, "fit_gaussian");
  const std::size_t n = feats.rows, d = feats.cols;
  GaussianStats g{std::vector<double>(d, 0.0), Matrix(d, d)};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) g.mean[c] += feats(r, c);
  for (double& m : g.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i) {
      const double di = feats(r, i) - g.mean[i];
      for (std::size_t j = i; j < d; ++j) g.cov(i, j) += di * (feats(r, j) - g.mean[j]);
    }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      g.cov(i, j) /= static_cast<double>(n - 1);
      g.cov(j, i) = g.cov(i, j);
    }
  return g;
}

double fid_from_stats(const GaussianStats& a, const GaussianStats& b) {
  const std::size_t d = a.mean.size();
  if (b.mean.size() != d || a.cov.rows != d || b.cov.rows != d || a.cov.cols != d || b.cov.cols != d)
    throw ShapeMismatch("fid: dimension mismatch");
  require_finite(a.cov, "fid");
  require_finite(b.cov, "fid");
  const Eigen::MatrixXd sa = to_eigen(a.cov);
  const Eigen::MatrixXd sb = to_eigen(b.cov);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = sqrt_a * sb * sqrt_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  double mean_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  const double value = mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  if (!std::isfinite(value)) throw NumericError("fid: non-finite result");
  return std::max(0.0, value);
}

double fid(const Matrix& feats_a, const Matrix& feats_b) {
  if (feats_a.cols != feats_b.cols) throw ShapeMismatch("fid: feature widths differ");
  GaussianStats a = fit_gaussian(feats_a), b = fit_gaussian(feats_b);
  for (std::size_t i = 0; i < a.mean.size(); ++i) {
    a.cov(i, i) += kFidRegularizer;
    b.cov(i, i) += kFidRegularizer;
  }
  return fid_from_stats(a, b);
}

std::vector<double> r_precision_curve(const Matrix& motion_feats, const Matrix& text_feats, std::size_t max_k, Rng& rng,
                                      std::size_t pool_size) {
  const std::size_t n = motion_feats.rows;
  if (text_feats.rows != n || text_feats.cols != motion_feats.cols) throw ShapeMismatch("r_precision: misaligned features");
  if (pool_size < 1 || n < pool_size) throw InvalidInput("r_precision: need at least pool_size aligned pairs");
  if (max_k == 0) throw InvalidInput("r_precision: k must be at least 1");
  std::vector<std::size_t> hits(max_k, 0);
  std::vector<std::size_t> others(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0, w = 0; j < n; ++j)
      if (j != i) others[w++] = j;
    // Partial Fisher-Yates: first pool_size - 1 entries become the distractors.
    for (std::size_t s = 0; s + 1 < pool_size; ++s) std::swap(others[s], others[s + rng.index(others.size() - s)]);
    const double d_true = row_distance(text_feats, i, motion_feats, i);
    std::size_t better = 0;
    for (std::size_t s = 0; s + 1 < pool_size; ++s)
      if (row_distance(text_feats, i, motion_feats, others[s]) < d_true) ++better;
    for (std::size_t k = better; k < max_k; ++k) ++hits[k];
  }
  std::vector<double> out(max_k);
  for (std::size_t k = 0; k < max_k; ++k) out[k] = static_cast<double>(hits[k]) / static_cast<double>(n);
  return out;
}

double r_precision(const Matrix& motion_feats, const Matrix& text_feats, std::size_t k, Rng& rng, std::size_t pool_size) {
  return r_precision_curve(motion_feats, text_feats, k, rng, pool_size).back();
}

double mm_dist(const Matrix& motion_feats, const Matrix& text_feats) {
  if (motion_feats.rows != text_feats.rows || motion_feats.cols != text_feats.cols) throw ShapeMismatch("mm_dist: misaligned features");
  if (motion_feats.rows == 0) throw InvalidInput("mm_dist: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < motion_feats.rows; ++i) s += row_distance(motion_feats, i, text_feats, i);
  return s / static_cast<double>(motion_feats.rows);
}

double diversity(const Matrix& feats, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  if (pairs.empty()) throw InvalidInput("diversity: no pairs");
  double s = 0.0;
  for (const auto& [a, b] : pairs) {
    if (a >= feats.rows || b >= feats.rows) throw InvalidInput("diversity: pair index out of range");
    s += row_distance(feats, a, feats, b);
  }
  return s / static_cast<double>(pairs.size());
}

double diversity(const Matrix& feats, std::size_t num_pairs, Rng& rng) {
  if (num_pairs == 0 || feats.rows < 2 * num_pairs) throw InvalidInput("diversity: need at least 2 * num_pairs rows");
  std::vector<std::size_t> idx(feats.rows);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t p = 0; p < num_pairs; ++p) pairs.emplace_back(idx[2 * p], idx[2 * p + 1]);
  return diversity(feats, pairs);
}

ad::Tensor contrastive_loss(const ad::Tensor& motion, const ad::Tensor& text, double temperature) {
  if (motion.rows() != text.rows() || motion.cols() != text.cols()) throw ShapeMismatch("contrastive_loss: misaligned batch");
  if (temperature <= 0) throw InvalidInput("contrastive_loss: temperature must be positive");
  const std::size_t n = motion.rows();
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i;
  // logits[i][j] = <text_i, motion_j> / temperature
  ad::Tensor logits = ad::scale(ad::matmul(text, ad::transpose(motion)), 1.0 / temperature);
  ad::Tensor t2m = ad::cross_entropy_rows(logits, diag);
  ad::Tensor m2t = ad::cross_entropy_rows(ad::transpose(logits), diag);
  return ad::scale(ad::add(t2m, m2t), 0.5);
}

Matcher::Matcher(const MatcherConfig& config, std::uint64_t seed) : config_(config) {
  if (config.hidden == 0 || config.feature_dim == 0) throw ConfigError("matcher widths must be positive");
  stats_ = identity_stats();
  Rng rng(mix_seed(seed, 0x3a7cULL));
  m1_ = nn::Linear::create(params_, "matcher.motion1", kFeatureDim, config.hidden, rng);
  m2_ = nn::Linear::create(params_, "matcher.motion2", config.hidden, config.hidden, rng);
  m3_ = nn::Linear::create(params_, "matcher.motion3", config.hidden, config.feature_dim, rng);
  t1_ = nn::Linear::create(params_, "matcher.text1", config.text_dim, config.hidden, rng);
  t2_ = nn::Linear::create(params_, "matcher.text2", config.hidden, config.feature_dim, rng);
}

ad::Tensor Matcher::encode_motion(const ad::Tensor& frames, const ad::Segments& segs) const {
  ad::Tensor h = ad::silu(m2_(ad::silu(m1_(frames))));
  return ad::l2_normalize_rows(m3_(ad::segment_mean(h, segs)));
}

ad::Tensor Matcher::encode_text(const ad::Tensor& sentences) const {
  return ad::l2_normalize_rows(t2_(ad::silu(t1_(sentences))));
}

Matrix Matcher::motion_features(const std::vector<MotionSequence>& raw) const {
  ad::NoGradGuard guard;
  std::vector<std::size_t> lengths;
  std::size_t total = 0;
  for (const auto& s : raw) {
    lengths.push_back(s.length());
    total += s.length();
  }
  Matrix packed(total, kFeatureDim);
  std::size_t off = 0;
  for (const auto& s : raw) {
    const Matrix n = normalize(s, stats_).frames;
    std::copy(n.data.begin(), n.data.end(), packed.row(off));
    off += s.length();
  }
  return encode_motion(ad::Tensor::constant(std::move(packed)), ad::pack_segments(lengths)).value();
}

Matrix Matcher::text_features(const Matrix& sentences) const {
  ad::NoGradGuard guard;
  return encode_text(ad::Tensor::constant(sentences)).value();
}

}  // namespace crossmo::metrics
