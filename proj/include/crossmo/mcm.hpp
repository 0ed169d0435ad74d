// SPDX-License-Identifier: Apache-2.0
#pragma once

// Morphology critic: a GRU reads a latent sequence left to right and an MLP
// maps the final hidden state to 24 bone lengths. Pretrained on real
// latents, then frozen and used as a differentiable penalty on generated
// latents.

#include <cstdint>

#include "crossmo/autograd.hpp"
#include "crossmo/nn.hpp"
#include "crossmo/skeleton.hpp"

namespace crossmo::mcm {

struct McmConfig {
  std::size_t latent_dim = 64;
  std::size_t hidden = 128;
};

class Mcm {
 public:
  Mcm(const McmConfig& config, std::uint64_t seed);

  const McmConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// One recurrence step. `x` is B x d, `h` is B x H. Gates follow
  ///   r = sig(x Wr + br + h Ur + cr), u = sig(x Wu + bu + h Uu + cu),
  ///   n = tanh(x Wn + bn + r * (h Un + cn)), h' = (1 - u) * n + u * h.
  ad::Tensor step(const ad::Tensor& x, const ad::Tensor& h) const;

  /// Packed latents (one segment per sequence) -> B x 24. Shorter sequences
  /// keep their hidden state once they end.
  ad::Tensor predict_packed(const ad::Tensor& z, const ad::Segments& segs) const;
  BoneLengthVector predict(const Matrix& z) const;

  // Raw gate weights, columns ordered [r | u | n].
  const ad::Tensor& input_weight() const { return wx_; }
  const ad::Tensor& input_bias() const { return bx_; }
  const ad::Tensor& hidden_weight() const { return wh_; }
  const ad::Tensor& hidden_bias() const { return bh_; }

  ad::Tensor head(const ad::Tensor& h) const;

 private:
  ad::Tensor gates(const ad::Tensor& xw, const ad::Tensor& h) const;

  McmConfig config_;
  nn::ParamSet params_;
  ad::Tensor wx_, bx_, wh_, bh_;
  nn::Linear head1_, head2_;
};

/// Mean over the batch of ||f(Z) - b||^2.
ad::Tensor pretrain_loss(const Mcm& model, const ad::Tensor& z, const ad::Segments& segs, const Matrix& bones);

/// Same penalty on a generator estimate. The caller assembles `z_hat` from
/// detached ground-truth rows and live masked-position predictions; with the
/// critic frozen this routes gradient to the masked rows only.
ad::Tensor morph_guide_loss(const Mcm& model, const ad::Tensor& z_hat, const ad::Segments& segs, const Matrix& bones);

}  // namespace crossmo::mcm
