// SPDX-License-Identifier: Apache-2.0

#include "crossmo/mcm.hpp"

#include <algorithm>

#include "crossmo/errors.hpp"

namespace crossmo::mcm {

Mcm::Mcm(const McmConfig& config, std::uint64_t seed) : config_(config) {
  if (config.latent_dim == 0 || config.hidden == 0) throw ConfigError("mcm widths must be positive");
  Rng rng(mix_seed(seed, 0x3c3ULL));
  const std::size_t d = config.latent_dim, h = config.hidden;
  wx_ = params_.add("mcm.gru.wx", nn::scaled_normal(rng, d, 3 * h));
  bx_ = params_.add("mcm.gru.bx", Matrix(1, 3 * h));
  wh_ = params_.add("mcm.gru.wh", nn::scaled_normal(rng, h, 3 * h));
  bh_ = params_.add("mcm.gru.bh", Matrix(1, 3 * h));
  head1_ = nn::Linear::create(params_, "mcm.head1", h, h, rng);
  head2_ = nn::Linear::create(params_, "mcm.head2", h, kNumBones, rng, 0.5);
}

ad::Tensor Mcm::gates(const ad::Tensor& xw, const ad::Tensor& h) const {
  const std::size_t H = config_.hidden;
  ad::Tensor hw = ad::linear(h, wh_, bh_);
  ad::Tensor r = ad::sigmoid(ad::add(ad::slice_cols(xw, 0, H), ad::slice_cols(hw, 0, H)));
  ad::Tensor u = ad::sigmoid(ad::add(ad::slice_cols(xw, H, H), ad::slice_cols(hw, H, H)));
  ad::Tensor n = ad::tanh(ad::add(ad::slice_cols(xw, 2 * H, H), ad::mul(r, ad::slice_cols(hw, 2 * H, H))));
  return ad::add(ad::mul(ad::one_minus(u), n), ad::mul(u, h));
}

ad::Tensor Mcm::step(const ad::Tensor& x, const ad::Tensor& h) const {
  if (x.cols() != config_.latent_dim || h.cols() != config_.hidden || x.rows() != h.rows())
    throw ShapeMismatch("mcm.step: shape mismatch");
  return gates(ad::linear(x, wx_, bx_), h);
}

ad::Tensor Mcm::head(const ad::Tensor& h) const { return head2_(ad::silu(head1_(h))); }

ad::Tensor Mcm::predict_packed(const ad::Tensor& z, const ad::Segments& segs) const {
  if (z.cols() != config_.latent_dim) throw ShapeMismatch("mcm: latent width mismatch");
  if (segs.empty()) throw InvalidInput("mcm: empty batch");
  std::size_t max_len = 0;
  for (const auto& s : segs) {
    if (s.length == 0) throw TooShort("mcm: sequences need at least one latent");
    max_len = std::max(max_len, s.length);
  }
  const std::size_t batch = segs.size();
  ad::Tensor xw = ad::linear(z, wx_, bx_);
  ad::Tensor h = ad::Tensor::constant(Matrix(batch, config_.hidden));
  for (std::size_t t = 0; t < max_len; ++t) {
    std::vector<std::size_t> idx(batch);
    std::vector<bool> active(batch);
    bool all = true;
    for (std::size_t b = 0; b < batch; ++b) {
      active[b] = t < segs[b].length;
      all = all && active[b];
      idx[b] = segs[b].offset + std::min(t, segs[b].length - 1);
    }
    ad::Tensor next = gates(ad::gather_rows(xw, idx), h);
    h = all ? next : ad::select_rows(h, next, active);
  }
  return head(h);
}

BoneLengthVector Mcm::predict(const Matrix& z) const {
  ad::NoGradGuard guard;
  const ad::Tensor out = predict_packed(ad::Tensor::constant(z), {{0, z.rows}});
  BoneLengthVector b;
  for (std::size_t e = 0; e < kNumBones; ++e) b[e] = out.value().data[e];
  return b;
}

ad::Tensor pretrain_loss(const Mcm& model, const ad::Tensor& z, const ad::Segments& segs, const Matrix& bones) {
  if (bones.rows != segs.size() || bones.cols != kNumBones) throw ShapeMismatch("mcm loss: one bone vector per sequence");
  ad::Tensor diff = ad::sub(model.predict_packed(z, segs), ad::Tensor::constant(bones));
  return ad::scale(ad::sum_sq(diff), 1.0 / static_cast<double>(bones.rows));
}

ad::Tensor morph_guide_loss(const Mcm& model, const ad::Tensor& z_hat, const ad::Segments& segs, const Matrix& bones) {
  return pretrain_loss(model, z_hat, segs, bones);
}

}  // namespace crossmo::mcm
