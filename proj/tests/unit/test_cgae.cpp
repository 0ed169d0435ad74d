// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <map>

#include "crossmo/cgae.hpp"
#include "crossmo/errors.hpp"
#include "crossmo/gradcheck.hpp"
#include "doctest.h"

using namespace crossmo;
using namespace crossmo::cgae;

namespace {

CgaeConfig micro_config() {
  CgaeConfig c;
  c.latent_dim = 3;
  c.hidden = 5;
  c.cond_proj = 4;
  c.beta = 0.3;
  return c;
}

Matrix random_bones(Rng& rng, std::size_t b) {
  Matrix m(b, kNumBones);
  for (double& v : m.data) v = rng.uniform(0.05, 0.6);
  return m;
}

Matrix conditions(std::size_t b) {
  Matrix m(b, embed::kSpeciesDim);
  for (std::size_t i = 0; i < b; ++i) {
    const auto e = embed::species_embed("species" + std::to_string(i)).vector;
    std::copy(e.data.begin(), e.data.end(), m.row(i));
  }
  return m;
}

}  // namespace

TEST_CASE("bone graph links bones sharing a joint") {
  const auto& topo = canonical_topology();
  const Matrix a = bone_graph(topo);
  std::map<int, std::size_t> degree;
  for (const auto& [p, c] : topo.bone_edges) {
    ++degree[p];
    ++degree[c];
  }
  // In a tree two distinct bones share at most one joint.
  std::size_t expected_pairs = 0;
  for (const auto& [j, d] : degree) expected_pairs += d * (d - 1) / 2;
  std::size_t ones = 0;
  for (std::size_t i = 0; i < kNumBones; ++i) {
    CHECK(a(i, i) == 1.0);
    for (std::size_t j = 0; j < kNumBones; ++j) {
      CHECK(a(i, j) == a(j, i));
      if (i != j && a(i, j) == 1.0) ++ones;
    }
  }
  CHECK(ones == 2 * expected_pairs);
}

TEST_CASE("normalised adjacency has sqrt-degree as its unit eigenvector") {
  const Matrix a = bone_graph(canonical_topology());
  const Matrix n = normalize_adjacency(a);
  std::vector<double> sq(kNumBones);
  for (std::size_t i = 0; i < kNumBones; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < kNumBones; ++j) d += a(i, j);
    sq[i] = std::sqrt(d);
  }
  for (std::size_t i = 0; i < kNumBones; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < kNumBones; ++j) {
      CHECK(n(i, j) == n(j, i));
      s += n(i, j) * sq[j];
    }
    CHECK(s == doctest::Approx(sq[i]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(normalize_adjacency(Matrix(2, 2, {1, 0, 0, 0})), InvalidInput);
}

TEST_CASE("gcn layer matches a brute-force oracle on stacked graphs") {
  Rng rng(5);
  const Matrix adj(3, 3, {0.5, 0.5, 0.0, 0.5, 0.25, 0.25, 0.0, 0.25, 0.75});
  const Matrix x = rng.normal_matrix(6, 2);  // two graphs of three nodes
  const Matrix w = rng.normal_matrix(2, 4);
  const Matrix b = rng.normal_matrix(1, 4);
  const Matrix y = gcn_layer(ad::Tensor::constant(x), adj, ad::Tensor::constant(w), ad::Tensor::constant(b)).value();
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t o = 0; o < 4; ++o) {
        double pre = b(0, o);
        for (std::size_t j = 0; j < 3; ++j)
          for (std::size_t k = 0; k < 2; ++k) pre += adj(i, j) * x(3 * g + j, k) * w(k, o);
        const double expect = pre > 30 ? pre : std::log1p(std::exp(pre));
        CHECK(y(3 * g + i, o) == doctest::Approx(expect).epsilon(1e-12));
      }
}

TEST_CASE("identity graph, identity weights, linear gcn returns its input") {
  Rng rng(1);
  const Matrix x = rng.normal_matrix(4, 3);
  Matrix eye3(3, 3), eye4(4, 4);
  for (int i = 0; i < 3; ++i) eye3(i, i) = 1.0;
  for (int i = 0; i < 4; ++i) eye4(i, i) = 1.0;
  const auto y = gcn_layer(ad::Tensor::constant(x), eye4, ad::Tensor::constant(eye3), ad::Tensor::constant(Matrix(1, 3)), true);
  CHECK(y.value() == x);
}

TEST_CASE("gaussian kl closed form") {
  CHECK(gaussian_kl(ad::Tensor::constant(Matrix(4, 3)), ad::Tensor::constant(Matrix(4, 3))).item() == 0.0);
  CHECK(gaussian_kl(ad::Tensor::constant(Matrix(1, 1, 1.0)), ad::Tensor::constant(Matrix(1, 1))).item() == 0.5);
  // Row mean: two rows, one contributing 0.5 and one 0.
  CHECK(gaussian_kl(ad::Tensor::constant(Matrix(2, 1, {1.0, 0.0})), ad::Tensor::constant(Matrix(2, 1))).item() == 0.25);
  const double lv = std::log(2.0);
  CHECK(gaussian_kl(ad::Tensor::constant(Matrix(1, 1)), ad::Tensor::constant(Matrix(1, 1, lv))).item() ==
        doctest::Approx(0.5 * (2.0 - 1.0 - lv)).epsilon(1e-15));
}

TEST_CASE("reparameterised samples have the posterior moments") {
  Rng rng(17);
  const std::size_t n = 40000;
  const Matrix mu(n, 1, 0.7);
  const Matrix lv(n, 1, std::log(0.25));
  const Matrix z = reparameterize(ad::Tensor::constant(mu), ad::Tensor::constant(lv),
                                  ad::Tensor::constant(rng.normal_matrix(n, 1)))
                       .value();
  double m = 0.0, v = 0.0;
  for (double x : z.data) m += x;
  m /= n;
  for (double x : z.data) v += (x - m) * (x - m);
  v /= n - 1;
  CHECK(m == doctest::Approx(0.7).epsilon(0.01));
  CHECK(v == doctest::Approx(0.25).epsilon(0.03));
}

TEST_CASE("decoded bone lengths are nonnegative and sampling is seeded") {
  Cgae model(CgaeConfig{}, 3);
  Rng rng(2);
  const Matrix z = rng.normal_matrix(8, model.config().latent_dim, 4.0);
  const Matrix b = model.decode(ad::Tensor::constant(z), conditions(8)).value();
  CHECK(b.rows == 8);
  CHECK(b.cols == kNumBones);
  for (double v : b.data) CHECK(v >= 0.0);
  const auto c = embed::species_embed("wolf");
  CHECK(model.sample_bones(c, 4) == model.sample_bones(c, 4));
  CHECK(model.sample_bones(c, 4) != model.sample_bones(c, 5));
  const auto tp = model.sample_tpose(c, 4);
  const auto back = extract_bone_lengths(tp, canonical_topology());
  const auto direct = model.sample_bones(c, 4);
  for (std::size_t e = 0; e < kNumBones; ++e) CHECK(back[e] == doctest::Approx(direct[e]).epsilon(1e-12));
}

TEST_CASE("cgae loss gradients match finite differences") {
  Cgae model(micro_config(), 11);
  Rng rng(4);
  const Matrix bones = random_bones(rng, 3);
  const Matrix cond = conditions(3);
  const Matrix noise = rng.normal_matrix(3, 3);
  std::vector<ad::Tensor> tensors;
  std::vector<std::string> names;
  for (const auto& e : model.params().entries()) {
    tensors.push_back(e.tensor);
    names.push_back(e.name);
  }
  gradcheck::Options o;
  o.max_coordinates = 240;
  const auto r = gradcheck::check([&] { return model.loss(bones, cond, noise).total; }, tensors, names, o);
  CHECK(r.coordinates >= 200);
  CHECK_MESSAGE(r.max_rel_error <= 1e-4, r.worst);
}

TEST_CASE("loss is recon plus beta times kl, monotone in beta") {
  Rng rng(9);
  const Matrix bones = random_bones(rng, 4);
  const Matrix cond = conditions(4);
  const Matrix noise = rng.normal_matrix(4, 3);
  double prev = -1.0;
  for (double beta : {0.0, 0.1, 1.0, 10.0}) {
    auto cfg = micro_config();
    cfg.beta = beta;
    Cgae model(cfg, 11);
    const auto l = model.loss(bones, cond, noise);
    CHECK(l.total.item() == doctest::Approx(l.recon.item() + beta * l.kl.item()).epsilon(1e-14));
    CHECK(l.kl.item() >= 0.0);
    CHECK(l.total.item() >= prev);
    prev = l.total.item();
  }
}

TEST_CASE("cgae rejects mismatched inputs") {
  Cgae model(micro_config(), 1);
  CHECK_THROWS_AS(model.encode(Matrix(2, 23), conditions(2)), ShapeMismatch);
  CHECK_THROWS_AS(model.encode(Matrix(2, 24), conditions(3)), ShapeMismatch);
}
