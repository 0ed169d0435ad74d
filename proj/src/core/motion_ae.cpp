// SPDX-License-Identifier: Apache-2.0

#include "crossmo/motion_ae.hpp"

#include <cmath>

#include "crossmo/errors.hpp"

namespace crossmo::ae {

std::size_t latent_length(std::size_t frames) {
  if (frames < 4) throw TooShort("motion autoencoder needs at least 4 frames");
  return frames / 4;
}

AeLoss ae_loss(const ad::Tensor& x_hat, const Matrix& x, const NormStats* stats, double lambda_morph,
               const SkeletonTopology& topo) {
  if (x_hat.rows() != x.rows || x_hat.cols() != x.cols || x.cols != kFeatureDim)
    throw ShapeMismatch("ae_loss: reconstruction and target shapes differ");
  if (x.rows == 0) throw InvalidInput("ae_loss: empty batch");
  const double inv_frames = 1.0 / static_cast<double>(x.rows);
  ad::Tensor target = ad::Tensor::constant(x);
  ad::Tensor mse = ad::scale(ad::sum_sq(ad::sub(x_hat, target)), inv_frames);
  ad::Tensor b_hat = bone_lengths_op(x_hat, stats, topo);
  ad::Tensor b = bone_lengths_op(target, stats, topo);
  ad::Tensor morph = ad::scale(ad::sum_sq(ad::sub(b_hat, b)), inv_frames);
  return {ad::add(mse, ad::scale(morph, lambda_morph)), mse, morph};
}

MotionAe::Conv MotionAe::make_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                                   std::size_t stride, std::size_t pad, Rng& rng, double gain) {
  Conv c;
  c.lin = nn::Linear::create(params_, name, kernel * in, out, rng, gain);
  c.geom = {kernel, stride, pad, config_.pad_mode};
  return c;
}

MotionAe::MotionAe(const AeConfig& config, std::uint64_t seed) : config_(config) {
  if (config.channels == 0 || config.latent_dim == 0) throw ConfigError("autoencoder widths must be positive");
  if (config.lambda_morph < 0) throw ConfigError("lambda_morph_recon must be nonnegative");
  stats_ = identity_stats();
  Rng rng(mix_seed(seed, 0xae0ULL));
  const std::size_t c = config.channels;
  const double res_gain = 0.5;
  enc_in_ = make_conv("ae.enc.in", kFeatureDim, c, 3, 1, 1, rng);
  for (std::size_t s = 0; s < 2; ++s) {
    const std::string p = "ae.enc.s" + std::to_string(s);
    down_.push_back(make_conv(p + ".down", c, c, 4, 2, 1, rng));
    std::vector<ResBlock> blocks;
    for (std::size_t r = 0; r < config.res_blocks; ++r) {
      const std::string q = p + ".res" + std::to_string(r);
      blocks.push_back({make_conv(q + ".a", c, c, 3, 1, 1, rng), make_conv(q + ".b", c, c, 3, 1, 1, rng, res_gain)});
    }
    enc_res_.push_back(std::move(blocks));
  }
  enc_out_ = make_conv("ae.enc.out", c, config.latent_dim, 3, 1, 1, rng);

  dec_in_ = make_conv("ae.dec.in", config.latent_dim, c, 3, 1, 1, rng);
  for (std::size_t s = 0; s < 2; ++s) {
    const std::string p = "ae.dec.s" + std::to_string(s);
    std::vector<ResBlock> blocks;
    for (std::size_t r = 0; r < config.res_blocks; ++r) {
      const std::string q = p + ".res" + std::to_string(r);
      blocks.push_back({make_conv(q + ".a", c, c, 3, 1, 1, rng), make_conv(q + ".b", c, c, 3, 1, 1, rng, res_gain)});
    }
    dec_res_.push_back(std::move(blocks));
    // Transposed conv: a 1-row input spreads over `kernel` output rows.
    Conv up;
    up.lin = nn::Linear::create(params_, p + ".up", c, 4 * c, rng, 1.0, /*with_bias=*/false);
    up.lin.bias = params_.add(p + ".up.b", Matrix(1, c));
    up.geom = {4, 2, 1, ad::PadMode::kZero};
    up_.push_back(up);
  }
  dec_out_ = make_conv("ae.dec.out", c, kFeatureDim, 3, 1, 1, rng);
}

ad::Tensor MotionAe::conv(const Conv& c, const ad::Tensor& x, const ad::Segments& segs, ad::Segments* out) const {
  ad::Tensor cols = ad::im2col(x, segs, c.geom);
  if (out) *out = ad::conv_out_segments(segs, c.geom);
  return c.lin(cols);
}

ad::Tensor MotionAe::deconv(const Conv& c, const ad::Tensor& x, const ad::Segments& segs, ad::Segments* out) const {
  // Bias is added once per spread row, so it is applied after folding.
  ad::Tensor spread = ad::matmul(x, c.lin.weight);
  ad::Tensor folded = ad::col2im(spread, segs, c.lin.out() / c.geom.kernel, c.geom);
  if (out) *out = ad::deconv_out_segments(segs, c.geom);
  return ad::add_row(folded, c.lin.bias);
}

ad::Tensor MotionAe::residual(const ResBlock& r, const ad::Tensor& x, const ad::Segments& segs) const {
  ad::Tensor h = conv(r.a, ad::silu(x), segs, nullptr);
  h = conv(r.b, ad::silu(h), segs, nullptr);
  return ad::add(x, h);
}

ad::Tensor MotionAe::encode_packed(const ad::Tensor& x, const ad::Segments& segs, ad::Segments* latent_segs) const {
  if (x.cols() != kFeatureDim) throw ShapeMismatch("ae.encode: frames must be 76 wide");
  for (const auto& s : segs) latent_length(s.length);
  ad::Segments cur = segs;
  ad::Tensor h = conv(enc_in_, x, cur, nullptr);
  for (std::size_t s = 0; s < down_.size(); ++s) {
    ad::Segments next;
    h = conv(down_[s], ad::silu(h), cur, &next);
    cur = next;
    for (const auto& r : enc_res_[s]) h = residual(r, h, cur);
  }
  h = conv(enc_out_, ad::silu(h), cur, nullptr);
  if (latent_segs) *latent_segs = cur;
  return h;
}

ad::Tensor MotionAe::decode_packed(const ad::Tensor& z, const ad::Segments& latent_segs,
                                   const std::vector<std::size_t>& target_lengths) const {
  if (z.cols() != config_.latent_dim) throw ShapeMismatch("ae.decode: latent width mismatch");
  if (target_lengths.size() != latent_segs.size()) throw ShapeMismatch("ae.decode: one target length per sequence");
  for (std::size_t i = 0; i < latent_segs.size(); ++i) {
    if (latent_segs[i].length == 0 || target_lengths[i] / 4 != latent_segs[i].length)
      throw InvalidInput("ae.decode: target length " + std::to_string(target_lengths[i]) + " incompatible with " +
                         std::to_string(latent_segs[i].length) + " latents");
  }
  ad::Segments cur = latent_segs;
  ad::Tensor h = conv(dec_in_, z, cur, nullptr);
  for (std::size_t s = 0; s < up_.size(); ++s) {
    for (const auto& r : dec_res_[s]) h = residual(r, h, cur);
    ad::Segments next;
    h = deconv(up_[s], ad::silu(h), cur, &next);
    cur = next;
  }
  h = conv(dec_out_, ad::silu(h), cur, nullptr);
  // Repeat each segment's last frame up to its target length.
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < cur.size(); ++i)
    for (std::size_t t = 0; t < target_lengths[i]; ++t) index.push_back(cur[i].offset + std::min(t, cur[i].length - 1));
  if (index.size() == h.rows()) {
    bool identity = true;
    for (std::size_t i = 0; i < index.size() && identity; ++i) identity = index[i] == i;
    if (identity) return h;
  }
  return ad::gather_rows(h, index);
}

Matrix MotionAe::to_model_space(const MotionSequence& raw) const {
  return config_.normalize_inputs ? normalize(raw, stats_).frames : raw.frames;
}

MotionSequence MotionAe::from_model_space(const Matrix& frames) const {
  MotionSequence s(frames);
  return config_.normalize_inputs ? denormalize(s, stats_) : s;
}

Matrix MotionAe::encode(const MotionSequence& raw) const {
  ad::NoGradGuard guard;
  latent_length(raw.length());
  return encode_packed(ad::Tensor::constant(to_model_space(raw)), {{0, raw.length()}}, nullptr).value();
}

MotionSequence MotionAe::decode(const Matrix& latents, std::size_t target_length) const {
  ad::NoGradGuard guard;
  const ad::Tensor x = decode_packed(ad::Tensor::constant(latents), {{0, latents.rows}}, {target_length});
  return from_model_space(x.value());
}

Matrix LatentStats::standardize(const Matrix& z) const {
  if (z.cols != mean.size()) throw ShapeMismatch("latent stats width mismatch");
  Matrix out = z;
  for (std::size_t r = 0; r < z.rows; ++r)
    for (std::size_t c = 0; c < z.cols; ++c) out(r, c) = (z(r, c) - mean[c]) / std[c];
  return out;
}

Matrix LatentStats::unstandardize(const Matrix& z) const {
  if (z.cols != mean.size()) throw ShapeMismatch("latent stats width mismatch");
  Matrix out = z;
  for (std::size_t r = 0; r < z.rows; ++r)
    for (std::size_t c = 0; c < z.cols; ++c) out(r, c) = z(r, c) * std[c] + mean[c];
  return out;
}

LatentStats compute_latent_stats(const std::vector<Matrix>& latents) {
  if (latents.empty()) throw InvalidInput("latent stats need at least one sequence");
  const std::size_t d = latents.front().cols;
  LatentStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  std::size_t n = 0;
  for (const auto& z : latents) {
    if (z.cols != d) throw ShapeMismatch("latent stats: width mismatch");
    for (std::size_t r = 0; r < z.rows; ++r)
      for (std::size_t c = 0; c < d; ++c) s.mean[c] += z(r, c);
    n += z.rows;
  }
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (const auto& z : latents)
    for (std::size_t r = 0; r < z.rows; ++r)
      for (std::size_t c = 0; c < d; ++c) s.std[c] += (z(r, c) - s.mean[c]) * (z(r, c) - s.mean[c]);
  for (double& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(n)), kStdFloor);
  return s;
}

}  // namespace crossmo::ae
