// SPDX-License-Identifier: Apache-2.0
#pragma once

// Temporal convolutional autoencoder: two stride-2 stages map L frames of
// 76-d features to T = floor(L/4) latent vectors; transposed convolutions map
// back to 4T frames, and the last frame is repeated up to the requested
// length. Batches are packed variable-length segments, so no frame is ever
// padding.

#include <cstdint>
#include <vector>

#include "crossmo/autograd.hpp"
#include "crossmo/features.hpp"
#include "crossmo/nn.hpp"

namespace crossmo::ae {

struct AeConfig {
  std::size_t channels = 64;
  std::size_t latent_dim = 64;
  std::size_t res_blocks = 2;
  double lambda_morph = 1.0;
  /// When false the model consumes raw features.
  bool normalize_inputs = true;
  ad::PadMode pad_mode = ad::PadMode::kZero;
};

/// floor(L / 4); throws TooShort for L < 4.
std::size_t latent_length(std::size_t frames);

struct AeLoss {
  ad::Tensor total;
  ad::Tensor mse;    // mean over frames of the squared frame error
  ad::Tensor morph;  // mean over frames of the squared bone-length error
};

/// Reconstruction plus morphological loss over packed sequences. `x_hat` and
/// `x` live in model space; `stats` (nullable) maps them back to metres for
/// the bone-length term.
AeLoss ae_loss(const ad::Tensor& x_hat, const Matrix& x, const NormStats* stats, double lambda_morph,
               const SkeletonTopology& topo);

class MotionAe {
 public:
  MotionAe(const AeConfig& config, std::uint64_t seed);

  const AeConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  const NormStats& stats() const { return stats_; }
  void set_stats(const NormStats& stats) { stats_ = stats; }
  /// Stats used to bring model-space frames back to metres.
  const NormStats* model_stats() const { return config_.normalize_inputs ? &stats_ : nullptr; }

  /// Raw sequence to model space (normalised when enabled).
  Matrix to_model_space(const MotionSequence& raw) const;
  MotionSequence from_model_space(const Matrix& frames) const;

  /// Packed model-space frames -> packed latents; `latent_segs` receives the
  /// latent segmentation.
  ad::Tensor encode_packed(const ad::Tensor& x, const ad::Segments& segs, ad::Segments* latent_segs) const;
  /// Packed latents -> packed frames with the given per-segment lengths.
  ad::Tensor decode_packed(const ad::Tensor& z, const ad::Segments& latent_segs,
                           const std::vector<std::size_t>& target_lengths) const;

  /// T x d latents of a raw motion (no gradient).
  Matrix encode(const MotionSequence& raw) const;
  /// Raw motion of `target_length` frames; floor(target_length / 4) must equal T.
  MotionSequence decode(const Matrix& latents, std::size_t target_length) const;

 private:
  struct Conv {
    nn::Linear lin;
    ad::ConvGeometry geom;
  };
  struct ResBlock {
    Conv a, b;
  };

  Conv make_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                 std::size_t pad, Rng& rng, double gain = 1.0);
  ad::Tensor conv(const Conv& c, const ad::Tensor& x, const ad::Segments& segs, ad::Segments* out) const;
  ad::Tensor deconv(const Conv& c, const ad::Tensor& x, const ad::Segments& segs, ad::Segments* out) const;
  ad::Tensor residual(const ResBlock& r, const ad::Tensor& x, const ad::Segments& segs) const;

  AeConfig config_;
  nn::ParamSet params_;
  NormStats stats_;
  Conv enc_in_, enc_out_, dec_in_, dec_out_;
  std::vector<Conv> down_, up_;
  std::vector<std::vector<ResBlock>> enc_res_, dec_res_;
};

/// Per-dimension mean / std of latents, used to standardise the generator's
/// working space.
struct LatentStats {
  std::vector<double> mean;
  std::vector<double> std;

  Matrix standardize(const Matrix& z) const;
  Matrix unstandardize(const Matrix& z) const;
  bool operator==(const LatentStats&) const = default;
};

LatentStats compute_latent_stats(const std::vector<Matrix>& latents);

}  // namespace crossmo::ae
