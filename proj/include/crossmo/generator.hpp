// SPDX-License-Identifier: Apache-2.0
#pragma once

// Masked latent generator. A pre-norm transformer reads [p; Z_masked], where
// p is the projected T-pose and masked rows hold a shared learnable token,
// and cross-attends to the caption tokens [s; W]. Each motion row h_i of the
// output conditions a small velocity network that transports Gaussian noise
// to the latent at that position (flow matching). Inference fills the
// sequence over R rounds, integrating each selected position's ODE with N
// Euler steps under classifier-free guidance.
//
// Latents here are in the standardised space (see ae::LatentStats).

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "crossmo/autograd.hpp"
#include "crossmo/embeddings.hpp"
#include "crossmo/mcm.hpp"
#include "crossmo/nn.hpp"
#include "crossmo/skeleton.hpp"

namespace crossmo::gen {

/// Flattened T-pose width: all 25 joints, the root included (always zero).
inline constexpr std::size_t kTposeDim = kNumJoints * 3;

struct GenConfig {
  std::size_t latent_dim = 64;
  std::size_t text_dim = embed::kTextDim;
  std::size_t blocks = 4;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t head_width = 256;
  std::size_t head_blocks = 2;
  /// Noise / time draws per masked position in one training step.
  std::size_t head_repeats = 4;
  double mask_ratio_min = 0.5;
  double mask_ratio_max = 1.0;
  double cond_dropout = 0.1;
  double lambda_morph_guide = 1.0;
};

struct InferConfig {
  std::size_t rounds = 8;   // R
  std::size_t steps = 16;   // N
  double omega = 3.0;
};

/// Masked latent positions, 0-based over the T motion rows (the T-pose row
/// is never maskable).
struct MaskSet {
  std::vector<std::size_t> positions;

  std::vector<bool> flags(std::size_t length) const;
};

/// ratio ~ U(min, max), ceil(ratio * T) distinct positions.
MaskSet sample_training_mask(std::size_t length, Rng& rng, double ratio_min = 0.5, double ratio_max = 1.0);

/// Positions still masked after each of the R rounds: round(T cos(pi r / 2R)),
/// forced to shrink by at least one per round, ending at 0.
std::vector<std::size_t> unmasking_schedule(std::size_t length, std::size_t rounds);

/// (1 - tau) * noise + tau * z, one tau per row.
Matrix flow_interpolate(const Matrix& z, const Matrix& noise, const std::vector<double>& tau);
/// z_tau + (1 - tau) * v, one tau per row.
ad::Tensor euler_clean(const ad::Tensor& z_tau, const std::vector<double>& tau, const ad::Tensor& v);
/// Mean over rows of ||v - target||^2.
ad::Tensor flow_objective(const ad::Tensor& v, const ad::Tensor& target);
/// v_uncond + omega * (v_cond - v_uncond)
Matrix cfg_velocity(const Matrix& v_cond, const Matrix& v_uncond, double omega);

/// One training sequence, latents already standardised.
struct GenSample {
  Matrix latents;      // T x d
  Matrix tpose;        // 1 x 75
  Matrix text_tokens;  // (n_w + 1) x text_dim, [s; W]
  Matrix bones;        // 1 x 24, canonical bone lengths
};

Matrix flatten_tpose(const TPose& tpose);

/// Every random quantity of one training step, drawn up front so the loss
/// itself is a deterministic function (finite differences rely on this).
struct TrainingDraws {
  std::vector<MaskSet> masks;
  std::vector<bool> drop_text;
  /// One row per (repeat, masked position), repeat-major.
  Matrix noise;
  std::vector<double> tau;
};

struct GenLoss {
  ad::Tensor total;
  ad::Tensor flow;
  ad::Tensor morph_guide;  // undefined when no critic is supplied
  /// Packed estimate of the clean latents used by the critic.
  ad::Tensor clean;
};

/// Context rows of a packed batch: sample i owns rows [offset, offset + T_i + 1).
struct Context {
  ad::Tensor hidden;
  ad::Segments segs;
};

/// Replaces the guided velocity during inference (tests).
using VelocityField = std::function<Matrix(const Matrix& z, double tau, const std::vector<std::size_t>& positions)>;

class MaskedGenerator {
 public:
  MaskedGenerator(const GenConfig& config, std::uint64_t seed);

  const GenConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  const embed::NullTextCondition& null_text() const { return null_text_; }
  const ad::Tensor& mask_token() const { return mask_token_; }

  /// Number of optimiser steps applied so far; inference warns at 0.
  std::int64_t trained_steps = 0;

  /// `memory` holds one (n_i x d_text) text block per sample, stacked.
  Context build_context(const std::vector<ad::Tensor>& latents, const std::vector<std::vector<bool>>& masked,
                        const std::vector<Matrix>& tposes, const std::vector<ad::Tensor>& memory) const;

  /// Velocity rows for (z_tau, tau, h) rows.
  ad::Tensor velocity(const ad::Tensor& z_tau, const std::vector<double>& tau, const ad::Tensor& h) const;

  TrainingDraws draw(const std::vector<GenSample>& batch, Rng& rng, bool allow_dropout = true) const;

  /// Flow loss plus, when `critic` is given, lambda * the morphology penalty
  /// on the one-step clean estimate of the first draw of each masked row.
  GenLoss loss(const std::vector<GenSample>& batch, const TrainingDraws& draws, const mcm::Mcm* critic) const;

  /// Generates T latents from scratch.
  Matrix infer(const embed::TextFeatures& text, const Matrix& tpose, std::size_t length, const InferConfig& cfg,
               std::uint64_t seed, const VelocityField* field = nullptr) const;

  /// Fills the masked rows of `latents`, leaving the others untouched.
  Matrix infill(const Matrix& latents, const std::vector<bool>& masked, const embed::TextFeatures& text,
                const Matrix& tpose, const InferConfig& cfg, std::uint64_t seed,
                const VelocityField* field = nullptr) const;

 private:
  struct Block {
    nn::LayerNorm ln1, ln2, ln3;
    nn::Linear q, k, v, o;
    nn::Linear cq, ck, cv, co;
    nn::Linear ff1, ff2;
  };

  ad::Tensor guided_velocity_rows(const Context& cond, const Context& uncond, const Matrix& z, double tau,
                                  const std::vector<std::size_t>& positions, double omega) const;

  GenConfig config_;
  nn::ParamSet params_;
  ad::Tensor mask_token_;
  nn::Linear tpose_proj_;
  std::vector<Block> blocks_;
  nn::LayerNorm final_ln_;
  nn::Linear head_z_, head_h_, head_t_;
  std::vector<std::pair<nn::Linear, nn::Linear>> head_blocks_;
  nn::Linear head_out_;
  embed::NullTextCondition null_text_;
};

}  // namespace crossmo::gen
