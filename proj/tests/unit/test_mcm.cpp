// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "crossmo/errors.hpp"
#include "crossmo/gradcheck.hpp"
#include "crossmo/mcm.hpp"
#include "crossmo/optim.hpp"
#include "doctest.h"

using namespace crossmo;
using namespace crossmo::mcm;

namespace {

McmConfig micro_config() { return McmConfig{3, 4}; }

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Randomises every parameter so zero-initialised biases are exercised too.
void scramble(Mcm& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& e : m.params().entries())
    for (double& v : e.tensor.mutable_value().data) v = 0.6 * rng.normal();
}

Matrix pack(const std::vector<Matrix>& parts) {
  std::size_t rows = 0;
  for (const auto& p : parts) rows += p.rows;
  Matrix out(rows, parts.front().cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data.begin(), p.data.end(), out.row(off));
    off += p.rows;
  }
  return out;
}

}  // namespace

TEST_CASE("gru step matches the gate equations") {
  Mcm m(micro_config(), 1);
  scramble(m, 2);
  Rng rng(3);
  const Matrix x = rng.normal_matrix(2, 3), h = rng.normal_matrix(2, 4);
  const Matrix out = m.step(ad::Tensor::constant(x), ad::Tensor::constant(h)).value();
  const Matrix& W = m.input_weight().value();
  const Matrix& B = m.input_bias().value();
  const Matrix& U = m.hidden_weight().value();
  const Matrix& C = m.hidden_bias().value();
  const std::size_t H = 4;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t j = 0; j < H; ++j) {
      auto xw = [&](std::size_t col) {
        double s = B(0, col);
        for (std::size_t k = 0; k < 3; ++k) s += x(b, k) * W(k, col);
        return s;
      };
      auto hu = [&](std::size_t col) {
        double s = C(0, col);
        for (std::size_t k = 0; k < H; ++k) s += h(b, k) * U(k, col);
        return s;
      };
      const double r = sig(xw(j) + hu(j));
      const double u = sig(xw(H + j) + hu(H + j));
      const double n = std::tanh(xw(2 * H + j) + r * hu(2 * H + j));
      CHECK(out(b, j) == doctest::Approx((1 - u) * n + u * h(b, j)).epsilon(1e-13));
    }
  }
}

TEST_CASE("a single latent is one step from the zero state") {
  Mcm m(micro_config(), 4);
  scramble(m, 5);
  Rng rng(6);
  const Matrix z = rng.normal_matrix(1, 3);
  const auto b = m.predict(z);
  const Matrix expect = m.head(m.step(ad::Tensor::constant(z), ad::Tensor::constant(Matrix(1, 4)))).value();
  for (std::size_t e = 0; e < kNumBones; ++e) CHECK(b[e] == expect.data[e]);
}

TEST_CASE("packed prediction equals per-sequence prediction") {
  Mcm m(micro_config(), 7);
  scramble(m, 8);
  Rng rng(9);
  const std::vector<Matrix> zs{rng.normal_matrix(5, 3), rng.normal_matrix(2, 3), rng.normal_matrix(7, 3)};
  const Matrix out = m.predict_packed(ad::Tensor::constant(pack(zs)), ad::pack_segments({5, 2, 7})).value();
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const auto b = m.predict(zs[i]);
    for (std::size_t e = 0; e < kNumBones; ++e) CHECK(out(i, e) == doctest::Approx(b[e]).epsilon(1e-13));
  }
  CHECK_THROWS_AS(m.predict_packed(ad::Tensor::constant(pack(zs)), {{0, 0}}), TooShort);
}

TEST_CASE("mcm loss gradients match finite differences") {
  Mcm m(micro_config(), 10);
  scramble(m, 11);
  Rng rng(12);
  nn::ParamSet inputs;
  ad::Tensor z = inputs.add("z", rng.normal_matrix(7, 3));
  Matrix bones(2, kNumBones);
  for (double& v : bones.data) v = rng.uniform(0.1, 0.5);
  const ad::Segments segs = ad::pack_segments({4, 3});
  std::vector<ad::Tensor> tensors{z};
  std::vector<std::string> names{"z"};
  for (const auto& e : m.params().entries()) {
    tensors.push_back(e.tensor);
    names.push_back(e.name);
  }
  gradcheck::Options o;
  o.max_coordinates = 240;
  const auto r = gradcheck::check([&] { return pretrain_loss(m, z, segs, bones); }, tensors, names, o);
  CHECK(r.coordinates >= 200);
  CHECK_MESSAGE(r.max_rel_error <= 1e-4, r.worst);
}

TEST_CASE("frozen critic routes gradient to masked rows only") {
  Mcm m(micro_config(), 13);
  scramble(m, 14);
  const std::uint64_t before = m.params().checksum();
  m.params().set_trainable(false);

  Rng rng(15);
  const Matrix z_true = rng.normal_matrix(6, 3);
  nn::ParamSet gen_params;
  ad::Tensor live = gen_params.add("pred", rng.normal_matrix(6, 3));
  const std::vector<bool> masked{false, true, false, true, true, false};
  const ad::Tensor z_hat = ad::select_rows(ad::Tensor::constant(z_true), live, masked);
  Matrix bones(1, kNumBones, 0.3);
  ad::backward(morph_guide_loss(m, z_hat, ad::pack_segments({6}), bones));

  const Matrix& g = live.grad();
  REQUIRE(g.rows == 6);
  double masked_mass = 0.0;
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      if (!masked[r]) CHECK(g(r, c) == 0.0);
      else masked_mass += std::abs(g(r, c));
    }
  CHECK(masked_mass > 0.0);
  for (const auto& e : m.params().entries()) CHECK(e.tensor.grad().empty());

  optim::Adam opt(gen_params, {});
  opt.step();
  CHECK(m.params().checksum() == before);
}

TEST_CASE("mcm loss rejects misaligned targets") {
  Mcm m(micro_config(), 1);
  CHECK_THROWS_AS(pretrain_loss(m, ad::Tensor::constant(Matrix(4, 3)), ad::pack_segments({4}), Matrix(2, kNumBones)),
                  ShapeMismatch);
  CHECK_THROWS_AS(m.predict(Matrix(4, 5)), ShapeMismatch);
}
