// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <set>

#include "crossmo/errors.hpp"
#include "crossmo/generator.hpp"
#include "crossmo/gradcheck.hpp"
#include "doctest.h"

using namespace crossmo;
using namespace crossmo::gen;

namespace {

GenConfig micro_config() {
  GenConfig c;
  c.latent_dim = 8;
  c.blocks = 1;
  c.heads = 2;
  c.ffn_mult = 2;
  c.head_width = 8;
  c.head_blocks = 1;
  c.head_repeats = 2;
  c.lambda_morph_guide = 0.5;
  return c;
}

GenSample make_sample(std::size_t length, Rng& rng, const std::string& caption) {
  GenSample s;
  s.latents = rng.normal_matrix(length, 8);
  s.tpose = rng.normal_matrix(1, kTposeDim, 0.3);
  s.text_tokens = embed::text_features(caption).tokens();
  s.bones = Matrix(1, kNumBones);
  for (double& v : s.bones.data) v = rng.uniform(0.1, 0.4);
  return s;
}

std::vector<ad::Tensor> all_params(MaskedGenerator& g, std::vector<std::string>& names) {
  std::vector<ad::Tensor> out;
  for (const auto& e : g.params().entries()) {
    out.push_back(e.tensor);
    names.push_back(e.name);
  }
  return out;
}

double grad_mass(const ad::Tensor& t) {
  double s = 0.0;
  for (double v : t.grad().data) s += std::abs(v);
  return s;
}

}  // namespace

TEST_CASE("training masks hide ceil(ratio * T) distinct positions") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = sample_training_mask(13, rng);
    CHECK(m.positions.size() >= 7);  // ceil(0.5 * 13)
    CHECK(m.positions.size() <= 13);
    CHECK(std::set<std::size_t>(m.positions.begin(), m.positions.end()).size() == m.positions.size());
    CHECK(std::is_sorted(m.positions.begin(), m.positions.end()));
  }
  // Uniform ratio on [0.5, 1]: the mean fraction sits near 0.75 (ceil adds under 1/T).
  double mean = 0.0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) mean += static_cast<double>(sample_training_mask(100, rng).positions.size()) / 100.0;
  mean /= n;
  CHECK(mean > 0.745);
  CHECK(mean < 0.765);
  CHECK(sample_training_mask(1, rng).positions.size() == 1);
  CHECK_THROWS_AS(sample_training_mask(0, rng), InvalidInput);
  CHECK_THROWS_AS(sample_training_mask(5, rng, 0.8, 0.4), InvalidInput);
}

TEST_CASE("cosine unmasking schedule") {
  CHECK(unmasking_schedule(10, 4) == std::vector<std::size_t>{9, 7, 4, 0});
  CHECK(unmasking_schedule(7, 1) == std::vector<std::size_t>{0});
  CHECK(unmasking_schedule(3, 3) == std::vector<std::size_t>{2, 1, 0});
  for (std::size_t t = 1; t <= 40; ++t)
    for (std::size_t r = 1; r <= t; ++r) {
      const auto s = unmasking_schedule(t, r);
      REQUIRE(s.size() == r);
      CHECK(s.back() == 0);
      std::size_t prev = t;
      for (std::size_t v : s) {
        CHECK(v < prev);
        prev = v;
      }
    }
  CHECK_THROWS_AS(unmasking_schedule(3, 4), InvalidInput);
  CHECK_THROWS_AS(unmasking_schedule(3, 0), InvalidInput);
}

TEST_CASE("flow path endpoints and one-step clean estimate") {
  Rng rng(2);
  const Matrix z = rng.normal_matrix(4, 5), noise = rng.normal_matrix(4, 5);
  CHECK(flow_interpolate(z, noise, {0, 0, 0, 0}) == noise);
  CHECK(flow_interpolate(z, noise, {1, 1, 1, 1}) == z);
  const std::vector<double> tau{0.0, 0.2, 0.5, 0.9};
  const Matrix zt = flow_interpolate(z, noise, tau);
  Matrix v = z;
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] -= noise.data[i];
  const Matrix clean = euler_clean(ad::Tensor::constant(zt), tau, ad::Tensor::constant(v)).value();
  CHECK(max_abs_diff(clean, z) < 1e-12);
  CHECK_THROWS_AS(flow_interpolate(z, noise, {0.1}), ShapeMismatch);
}

TEST_CASE("guidance weights 0 and 1 return the branches exactly") {
  Rng rng(3);
  const Matrix c = rng.normal_matrix(3, 4), u = rng.normal_matrix(3, 4);
  CHECK(cfg_velocity(c, u, 1.0) == c);
  CHECK(cfg_velocity(c, u, 0.0) == u);
  const Matrix g = cfg_velocity(c, u, 3.0);
  CHECK(g(1, 2) == doctest::Approx(u(1, 2) + 3.0 * (c(1, 2) - u(1, 2))).epsilon(1e-15));
  CHECK_THROWS_AS(cfg_velocity(c, Matrix(2, 4), 2.0), ShapeMismatch);
}

TEST_CASE("euler integration of a constant field adds the field") {
  MaskedGenerator g(micro_config(), 4);
  Rng rng(5);
  const Matrix shift = rng.normal_matrix(1, 8);
  Matrix starts(10, 8);
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> seen;
  VelocityField field = [&](const Matrix& z, double tau, const std::vector<std::size_t>& positions) {
    if (tau == 0.0) {
      sizes.push_back(positions.size());
      for (std::size_t k = 0; k < positions.size(); ++k) {
        std::copy(z.row(k), z.row(k) + 8, starts.row(positions[k]));
        seen.push_back(positions[k]);
      }
    }
    Matrix v(z.rows, z.cols);
    for (std::size_t r = 0; r < v.rows; ++r) std::copy(shift.data.begin(), shift.data.end(), v.row(r));
    return v;
  };
  InferConfig cfg{4, 7, 3.0};
  const Matrix z = g.infer(embed::text_features("a dog walks"), Matrix(1, kTposeDim), 10, cfg, 9, &field);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 8; ++c) CHECK(z(r, c) == doctest::Approx(starts(r, c) + shift(0, c)).epsilon(1e-12));
  // Rounds unmask 1, 2, 3, 4 positions (remaining 9, 7, 4, 0), each exactly once.
  CHECK(sizes == std::vector<std::size_t>{1, 2, 3, 4});
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(seen[i] == i);
}

TEST_CASE("a field aimed at a target lands on it after N Euler steps") {
  MaskedGenerator g(micro_config(), 4);
  Rng rng(6);
  const Matrix target = rng.normal_matrix(6, 8);
  VelocityField field = [&](const Matrix& z, double tau, const std::vector<std::size_t>& positions) {
    Matrix v(z.rows, z.cols);
    for (std::size_t k = 0; k < positions.size(); ++k)
      for (std::size_t c = 0; c < z.cols; ++c) v(k, c) = (target(positions[k], c) - z(k, c)) / (1.0 - tau);
    return v;
  };
  const Matrix z = g.infer(embed::text_features("a cat runs"), Matrix(1, kTposeDim), 6, InferConfig{3, 5, 2.0}, 1, &field);
  CHECK(max_abs_diff(z, target) < 1e-12);
}

TEST_CASE("infill keeps unmasked rows bit-identical") {
  MaskedGenerator g(micro_config(), 7);
  g.trained_steps = 1;
  Rng rng(8);
  const Matrix known = rng.normal_matrix(9, 8);
  const std::vector<bool> masked{false, false, true, true, true, false, true, false, false};
  const Matrix out = g.infill(known, masked, embed::text_features("a horse trots"), rng.normal_matrix(1, kTposeDim),
                              InferConfig{2, 3, 2.5}, 11);
  for (std::size_t r = 0; r < 9; ++r) {
    const bool same = std::equal(out.row(r), out.row(r) + 8, known.row(r));
    CHECK(same == !masked[r]);
  }
  CHECK_THROWS_AS(g.infill(known, std::vector<bool>(4, true), embed::text_features("x"), Matrix(1, kTposeDim), {}, 1),
                  ShapeMismatch);
}

TEST_CASE("seeded inference is reproducible") {
  MaskedGenerator g(micro_config(), 7);
  g.trained_steps = 1;
  const auto text = embed::text_features("a horse trots");
  const Matrix tp(1, kTposeDim, 0.1);
  const Matrix a = g.infer(text, tp, 5, InferConfig{2, 3, 2.5}, 11);
  CHECK(a == g.infer(text, tp, 5, InferConfig{2, 3, 2.5}, 11));
  CHECK(a != g.infer(text, tp, 5, InferConfig{2, 3, 2.5}, 12));
}

TEST_CASE("the mask token only receives gradient through masked rows") {
  MaskedGenerator g(micro_config(), 12);
  Rng rng(13);
  const ad::Tensor z = ad::Tensor::constant(rng.normal_matrix(5, 8));
  const ad::Tensor mem = ad::Tensor::constant(embed::text_features("a bird hops").tokens());
  const Matrix tp = rng.normal_matrix(1, kTposeDim);

  auto ctx = g.build_context({z}, {std::vector<bool>(5, false)}, {tp}, {mem});
  CHECK(ctx.hidden.rows() == 6);
  ad::backward(ad::sum_sq(ctx.hidden));
  CHECK(grad_mass(g.mask_token()) == 0.0);

  g.params().zero_grad();
  ctx = g.build_context({z}, {std::vector<bool>{false, true, false, false, true}}, {tp}, {mem});
  ad::backward(ad::sum_sq(ctx.hidden));
  CHECK(grad_mass(g.mask_token()) > 0.0);
}

TEST_CASE("generator loss gradients match finite differences") {
  MaskedGenerator g(micro_config(), 14);
  mcm::Mcm critic(mcm::McmConfig{8, 4}, 15);
  critic.params().set_trainable(false);
  Rng rng(16);
  const std::vector<GenSample> batch{make_sample(3, rng, "a wolf runs"), make_sample(2, rng, "a deer leaps")};
  TrainingDraws d = g.draw(batch, rng, false);
  d.drop_text = {false, true};
  std::vector<std::string> names;
  const auto tensors = all_params(g, names);
  gradcheck::Options o;
  o.max_coordinates = 300;
  // Attention is invariant to a key bias, so those gradients are exactly zero
  // and only finite-difference roundoff remains to be compared.
  o.floor = 1e-5;
  const auto r = gradcheck::check([&] { return g.loss(batch, d, &critic).total; }, tensors, names, o);
  CHECK(r.coordinates >= 200);
  CHECK_MESSAGE(r.max_rel_error <= 1e-4, r.worst);
  CHECK(r.max_abs_error < 1e-8);
}

TEST_CASE("zero guide weight reduces the objective to flow matching") {
  auto cfg = micro_config();
  cfg.lambda_morph_guide = 0.0;
  MaskedGenerator g(cfg, 17);
  mcm::Mcm critic(mcm::McmConfig{8, 4}, 18);
  Rng rng(19);
  const std::vector<GenSample> batch{make_sample(4, rng, "a fox trots")};
  const auto d = g.draw(batch, rng);
  const auto with = g.loss(batch, d, &critic);
  const auto without = g.loss(batch, d, nullptr);
  CHECK(with.total.item() == with.flow.item());
  CHECK(without.total.item() == with.flow.item());
  CHECK_FALSE(without.morph_guide.defined());

  MaskedGenerator guided(micro_config(), 17);
  CHECK_THROWS_AS(guided.loss(batch, d, nullptr), ConfigError);
}

TEST_CASE("dropped captions train the null text condition") {
  MaskedGenerator g(micro_config(), 20);
  mcm::Mcm critic(mcm::McmConfig{8, 4}, 21);
  critic.params().set_trainable(false);
  Rng rng(22);
  const std::vector<GenSample> batch{make_sample(4, rng, "a lizard crawls"), make_sample(3, rng, "a lizard turns")};
  TrainingDraws d = g.draw(batch, rng);

  d.drop_text = {false, false};
  ad::backward(g.loss(batch, d, &critic).total);
  CHECK(grad_mass(g.null_text().sentence) == 0.0);
  CHECK(grad_mass(g.null_text().word) == 0.0);

  g.params().zero_grad();
  d.drop_text = {false, true};
  ad::backward(g.loss(batch, d, &critic).total);
  CHECK(grad_mass(g.null_text().sentence) > 0.0);
  CHECK(grad_mass(g.null_text().word) > 0.0);
}

TEST_CASE("loss validates its draws") {
  MaskedGenerator g(micro_config(), 23);
  mcm::Mcm critic(mcm::McmConfig{8, 4}, 24);
  Rng rng(25);
  const std::vector<GenSample> batch{make_sample(4, rng, "a bear walks")};
  auto d = g.draw(batch, rng);
  d.noise = Matrix(1, 8);
  CHECK_THROWS_AS(g.loss(batch, d, &critic), ShapeMismatch);
  CHECK_THROWS_AS(g.loss({}, d, &critic), InvalidInput);
}
