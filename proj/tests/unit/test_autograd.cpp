// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <functional>

#include "crossmo/autograd.hpp"
#include "crossmo/errors.hpp"
#include "crossmo/gradcheck.hpp"
#include "crossmo/rng.hpp"
#include "doctest.h"

using namespace crossmo;
using ad::Tensor;

namespace {

Tensor param(Rng& rng, std::size_t r, std::size_t c, double s = 1.0) {
  return Tensor::parameter(rng.normal_matrix(r, c, s));
}

// Weighted sum so every output element gets a distinct upstream gradient.
Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ad::sum(ad::mul(y, Tensor::constant(rng.normal_matrix(y.rows(), y.cols()))));
}

void expect_grad(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves, double tol = 1e-6) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < leaves.size(); ++i) names.push_back("x" + std::to_string(i));
  const auto rep = gradcheck::check(f, leaves, names);
  CHECK_MESSAGE(rep.max_rel_error < tol, "worst " << rep.worst << " rel " << rep.max_rel_error);
}

}  // namespace

TEST_CASE("elementwise and reduction ops pass finite differences") {
  Rng rng(1);
  Tensor a = param(rng, 3, 4), b = param(rng, 3, 4), row = param(rng, 1, 4);
  expect_grad([&] { return probe(ad::add(a, b)); }, {a, b});
  expect_grad([&] { return probe(ad::sub(a, b)); }, {a, b});
  expect_grad([&] { return probe(ad::mul(a, b)); }, {a, b});
  expect_grad([&] { return probe(ad::add_row(a, row)); }, {a, row});
  expect_grad([&] { return probe(ad::scale(ad::add_scalar(ad::one_minus(a), 0.3), -2.0)); }, {a});
  expect_grad([&] { return probe(ad::silu(a)); }, {a});
  expect_grad([&] { return probe(ad::softplus(a)); }, {a});
  expect_grad([&] { return probe(ad::sigmoid(a)); }, {a});
  expect_grad([&] { return probe(ad::tanh(a)); }, {a});
  expect_grad([&] { return probe(ad::exp(ad::scale(a, 0.3))); }, {a});
  expect_grad([&] { return probe(ad::square(a)); }, {a});
  expect_grad([&] { return ad::mean(ad::mul(a, b)); }, {a, b});
  expect_grad([&] { return ad::sum_sq(a); }, {a});
  expect_grad([&] { return probe(ad::row_sum_sq(a)); }, {a});
  expect_grad([&] { return probe(ad::segment_mean(a, {{0, 1}, {1, 2}})); }, {a});
}

TEST_CASE("linear algebra and normalisation ops pass finite differences") {
  Rng rng(2);
  Tensor x = param(rng, 5, 3), w = param(rng, 3, 4), bias = param(rng, 1, 4);
  Tensor g = param(rng, 1, 3), beta = param(rng, 1, 3);
  expect_grad([&] { return probe(ad::matmul(x, w)); }, {x, w});
  expect_grad([&] { return probe(ad::linear(x, w, bias)); }, {x, w, bias});
  expect_grad([&] { return probe(ad::linear(x, w, Tensor())); }, {x, w});
  expect_grad([&] { return probe(ad::layer_norm(x, g, beta)); }, {x, g, beta});
  expect_grad([&] { return probe(ad::l2_normalize_rows(x)); }, {x});
}

TEST_CASE("structural ops route gradients to the right rows") {
  Rng rng(3);
  Tensor a = param(rng, 4, 3), b = param(rng, 2, 3), c = param(rng, 4, 2), one = param(rng, 1, 3);
  expect_grad([&] { return probe(ad::concat_rows({a, b})); }, {a, b});
  expect_grad([&] { return probe(ad::concat_cols({a, c})); }, {a, c});
  expect_grad([&] { return probe(ad::slice_rows(a, 1, 2)); }, {a});
  expect_grad([&] { return probe(ad::slice_cols(a, 1, 2)); }, {a});
  expect_grad([&] { return probe(ad::gather_rows(a, {3, 0, 3, 1})); }, {a});
  expect_grad([&] { return probe(ad::reshape(a, 2, 6)); }, {a});
  expect_grad([&] { return probe(ad::transpose(a)); }, {a});
  expect_grad([&] { return probe(ad::select_rows(a, one, {true, false, true, false})); }, {a, one});
  expect_grad([&] { return ad::cross_entropy_rows(a, {0, 2, 1, 1}); }, {a});

  // Rows not taken from `a` receive exactly zero gradient.
  a.zero_grad();
  ad::backward(probe(ad::select_rows(a, one, {true, false, true, false})));
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(a.grad()(0, j) == 0.0);
    CHECK(a.grad()(2, j) == 0.0);
  }
}

TEST_CASE("convolution unfold/fold and attention pass finite differences") {
  Rng rng(4);
  const ad::Segments segs = {{0, 6}, {6, 5}};
  Tensor x = param(rng, 11, 2);
  for (auto mode : {ad::PadMode::kZero, ad::PadMode::kCircular}) {
    ad::ConvGeometry g{4, 2, 1, mode};
    expect_grad([&] { return probe(ad::im2col(x, segs, g)); }, {x});
  }
  ad::ConvGeometry up{4, 2, 1, ad::PadMode::kZero};
  Tensor y = param(rng, 11, 4 * 3);
  expect_grad([&] { return probe(ad::col2im(y, segs, 3, up)); }, {y});

  const ad::Segments qs = {{0, 3}, {3, 2}}, ks = {{0, 2}, {2, 4}};
  Tensor q = param(rng, 5, 8), k = param(rng, 6, 8), v = param(rng, 6, 8);
  expect_grad([&] { return probe(ad::attention(q, k, v, qs, ks, 2)); }, {q, k, v});
}

TEST_CASE("conv geometry arithmetic") {
  ad::ConvGeometry down{4, 2, 1, ad::PadMode::kZero};
  CHECK(ad::conv_out_length(8, down) == 4);
  CHECK(ad::conv_out_length(9, down) == 4);
  CHECK(ad::conv_out_length(2, down) == 1);
  CHECK(ad::deconv_out_length(5, down) == 10);
  CHECK(ad::total_rows(ad::pack_segments({3, 4, 1})) == 8);
}

TEST_CASE("backward accumulates leaf gradients and releases the graph") {
  Tensor a = Tensor::parameter(Matrix(1, 1, 2.0));
  ad::backward(ad::sum(ad::square(a)));
  ad::backward(ad::sum(ad::square(a)));
  CHECK(a.grad()(0, 0) == doctest::Approx(8.0));
  a.zero_grad();
  {
    ad::NoGradGuard guard;
    Tensor y = ad::square(a);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK_THROWS_AS(ad::add(a, Tensor::constant(Matrix(2, 2))), ShapeMismatch);
}
