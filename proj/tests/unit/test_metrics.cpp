// SPDX-License-Identifier: Apache-2.0
#include <Eigen/Dense>
#include <cmath>

#include "crossmo/dataset.hpp"
#include "crossmo/embeddings.hpp"
#include "crossmo/errors.hpp"
#include "crossmo/gradcheck.hpp"
#include "crossmo/metrics.hpp"
#include "doctest.h"

using namespace crossmo;
using namespace crossmo::metrics;

namespace {

Eigen::MatrixXd eig(const Matrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) e(r, c) = m(r, c);
  return e;
}

// Independent route: eigenvalues of the non-symmetric product S_a S_b are
// real and nonnegative, and tr sqrt(S_a S_b) is the sum of their roots.
double fid_oracle(const Matrix& a, const Matrix& b) {
  const Eigen::MatrixXd xa = eig(a), xb = eig(b);
  const Eigen::RowVectorXd ma = xa.colwise().mean(), mb = xb.colwise().mean();
  const Eigen::MatrixXd ca = xa.rowwise() - ma, cb = xb.rowwise() - mb;
  const auto d = static_cast<Eigen::Index>(a.cols);
  const Eigen::MatrixXd sa = ca.transpose() * ca / double(a.rows - 1) + kFidRegularizer * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd sb = cb.transpose() * cb / double(b.rows - 1) + kFidRegularizer * Eigen::MatrixXd::Identity(d, d);
  Eigen::EigenSolver<Eigen::MatrixXd> es(sa * sb);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) tr_sqrt += std::sqrt(std::max(0.0, es.eigenvalues()(i).real()));
  return std::max(0.0, (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt);
}

double distance(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols; ++c) s += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
  return std::sqrt(s);
}

Matrix unit_rows(Matrix m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double n = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) n += m(r, c) * m(r, c);
    for (std::size_t c = 0; c < m.cols; ++c) m(r, c) /= std::sqrt(n);
  }
  return m;
}

}  // namespace

TEST_CASE("mme of a rigid motion against its own bones is zero") {
  const auto species = generate_synthetic_species(5, 2).front();
  const auto rec = generate_gait(species, GaitKind::kRun, 40, 3);
  const auto& topo = canonical_topology();
  CHECK(mme(rec.motion, rec.tpose_bone_lengths, topo) < 1e-7);

  BoneLengthVector longer = rec.tpose_bone_lengths;
  for (std::size_t e = 0; e < kNumBones; ++e) longer[e] += 0.1;
  CHECK(mme(rec.motion, longer, topo) == doctest::Approx(0.1).epsilon(1e-6));

  // Direct oracle on an arbitrary reference.
  BoneLengthVector ref{};
  for (std::size_t e = 0; e < kNumBones; ++e) ref[e] = 0.02 * static_cast<double>(e);
  const Matrix lens = bone_lengths_per_frame(rec.motion, topo);
  double s = 0.0;
  for (std::size_t t = 0; t < lens.rows; ++t)
    for (std::size_t e = 0; e < kNumBones; ++e) s += std::abs(lens(t, e) - ref[e]);
  CHECK(mme(rec.motion, ref, topo) == doctest::Approx(s / double(lens.rows * kNumBones)).epsilon(1e-14));
  CHECK_THROWS_AS(mme(MotionSequence(Matrix(0, kFeatureDim)), ref, topo), InvalidInput);
}

TEST_CASE("fid matches an eigen-decomposition oracle") {
  Rng rng(4);
  Matrix a = rng.normal_matrix(60, 5), b = rng.normal_matrix(80, 5, 1.7);
  for (std::size_t r = 0; r < b.rows; ++r) {
    b(r, 0) += 0.8;
    b(r, 3) += 0.5 * b(r, 1);
  }
  const double f = fid(a, b);
  CHECK(f == doctest::Approx(fid_oracle(a, b)).epsilon(1e-9));
  CHECK(fid(b, a) == doctest::Approx(f).epsilon(1e-9));
  CHECK(fid(a, a) < 1e-9);
  CHECK(fid(a, a) >= 0.0);
}

TEST_CASE("one-dimensional fid reduces to a closed form") {
  // Means 0 and 3 with equal variance: distance is the squared mean gap.
  Matrix a(4, 1, {-1.0, 1.0, -1.0, 1.0});
  Matrix b(4, 1, {2.0, 4.0, 2.0, 4.0});
  CHECK(fid(a, b) == doctest::Approx(9.0).epsilon(1e-9));
  // Variances 1 and 4, equal means: (1 - 2)^2.
  Matrix c(4, 1, {-2.0, 2.0, -2.0, 2.0});
  const double va = 4.0 / 3.0, vc = 16.0 / 3.0;
  CHECK(fid(a, c) == doctest::Approx(std::pow(std::sqrt(va + 1e-6) - std::sqrt(vc + 1e-6), 2)).epsilon(1e-9));
  CHECK_THROWS_AS(fid(Matrix(1, 2), Matrix(3, 2)), InvalidInput);
}

TEST_CASE("r-precision is perfect for identical features and near chance for noise") {
  Rng rng(5);
  const Matrix f = rng.normal_matrix(64, 6);
  const auto perfect = r_precision_curve(f, f, 3, rng);
  for (double v : perfect) CHECK(v == 1.0);

  const std::size_t n = 3000;
  const Matrix m = rng.normal_matrix(n, 4), t = rng.normal_matrix(n, 4);
  const auto curve = r_precision_curve(m, t, 3, rng, 32);
  CHECK(curve[0] == doctest::Approx(1.0 / 32.0).epsilon(0.4));
  CHECK(curve[2] == doctest::Approx(3.0 / 32.0).epsilon(0.25));
  CHECK(curve[0] <= curve[1]);
  CHECK(curve[1] <= curve[2]);
  Rng again(9), again2(9);
  CHECK(r_precision(m, t, 2, again) == r_precision_curve(m, t, 2, again2)[1]);
}

TEST_CASE("matching distance and diversity oracles") {
  Rng rng(6);
  const Matrix m = rng.normal_matrix(10, 3), t = rng.normal_matrix(10, 3);
  double expect = 0.0;
  for (std::size_t i = 0; i < 10; ++i) expect += distance(m, i, t, i) / 10.0;
  CHECK(mm_dist(m, t) == doctest::Approx(expect).epsilon(1e-14));

  // Two tight clusters 10 apart: cross pairs measure the gap, within pairs ~0.
  Matrix f(6, 2);
  for (std::size_t r = 0; r < 6; ++r) {
    f(r, 0) = (r < 3 ? 0.0 : 10.0) + 1e-3 * rng.normal();
    f(r, 1) = 1e-3 * rng.normal();
  }
  CHECK(diversity(f, {{0, 3}, {1, 4}, {2, 5}}) == doctest::Approx(10.0).epsilon(1e-3));
  CHECK(diversity(f, {{0, 1}, {3, 4}}) < 1e-2);
  CHECK(diversity(Matrix(8, 3, 2.0), 4, rng) == 0.0);
  CHECK_THROWS_AS(diversity(f, 4, rng), InvalidInput);
  CHECK_THROWS_AS(diversity(f, {{0, 6}}), InvalidInput);
}

TEST_CASE("contrastive loss matches a direct softmax computation") {
  Rng rng(7);
  const Matrix m = unit_rows(rng.normal_matrix(3, 4)), t = unit_rows(rng.normal_matrix(3, 4));
  const double temp = 0.5;
  Matrix logits(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += t(i, c) * m(j, c);
      logits(i, j) = s / temp;
    }
  double rows = 0.0, cols = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double zr = 0.0, zc = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      zr += std::exp(logits(i, j));
      zc += std::exp(logits(j, i));
    }
    rows += std::log(zr) - logits(i, i);
    cols += std::log(zc) - logits(i, i);
  }
  const double expect = 0.5 * (rows + cols) / 3.0;
  CHECK(contrastive_loss(ad::Tensor::constant(m), ad::Tensor::constant(t), temp).item() ==
        doctest::Approx(expect).epsilon(1e-13));
  CHECK_THROWS_AS(contrastive_loss(ad::Tensor::constant(m), ad::Tensor::constant(t), 0.0), InvalidInput);
}

TEST_CASE("matcher contrastive objective gradients match finite differences") {
  MatcherConfig cfg;
  cfg.hidden = 6;
  cfg.feature_dim = 4;
  Matcher matcher(cfg, 3);
  Rng rng(8);
  const Matrix frames = rng.normal_matrix(11, kFeatureDim, 0.5);
  const Matrix sentences = rng.normal_matrix(2, cfg.text_dim);
  const ad::Segments segs = ad::pack_segments({5, 6});
  std::vector<ad::Tensor> tensors;
  std::vector<std::string> names;
  for (const auto& e : matcher.params().entries()) {
    tensors.push_back(e.tensor);
    names.push_back(e.name);
  }
  auto loss = [&] {
    return contrastive_loss(matcher.encode_motion(ad::Tensor::constant(frames), segs),
                            matcher.encode_text(ad::Tensor::constant(sentences)), cfg.temperature);
  };
  gradcheck::Options o;
  o.max_coordinates = 240;
  const auto r = gradcheck::check(loss, tensors, names, o);
  CHECK(r.coordinates >= 200);
  CHECK_MESSAGE(r.max_rel_error <= 1e-4, r.worst);
}

TEST_CASE("matcher features are unit rows") {
  Matcher matcher(MatcherConfig{}, 1);
  const auto species = generate_synthetic_species(2, 2).front();
  const auto rec = generate_gait(species, GaitKind::kWalk, 30, 1);
  const Matrix f = matcher.motion_features({rec.motion, rec.motion});
  REQUIRE(f.rows == 2);
  double n = 0.0;
  for (std::size_t c = 0; c < f.cols; ++c) n += f(0, c) * f(0, c);
  CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f(0, 0) == f(1, 0));
  const Matrix tf = matcher.text_features(embed::text_features("a wolf walks").sentence);
  CHECK(tf.cols == f.cols);
}
