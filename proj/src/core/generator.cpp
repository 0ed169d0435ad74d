// SPDX-License-Identifier: Apache-2.0

#include "crossmo/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "crossmo/errors.hpp"
#include "crossmo/log.hpp"

namespace crossmo::gen {
namespace {

constexpr std::size_t kTimeEmbedWidth = 64;
constexpr double kTimeScale = 1000.0;

Matrix positional_rows(const ad::Segments& segs, std::size_t width) {
  std::vector<double> pos;
  for (const auto& s : segs)
    for (std::size_t t = 0; t < s.length; ++t) pos.push_back(static_cast<double>(t));
  return nn::sinusoidal_embedding(pos, width);
}

Matrix rows_of(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(idx.size(), m.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy(m.row(idx[i]), m.row(idx[i]) + m.cols, out.row(i));
  return out;
}

}  // namespace

std::vector<bool> MaskSet::flags(std::size_t length) const {
  std::vector<bool> f(length, false);
  for (std::size_t p : positions) {
    if (p >= length) throw InvalidInput("mask position out of range");
    f[p] = true;
  }
  return f;
}

MaskSet sample_training_mask(std::size_t length, Rng& rng, double ratio_min, double ratio_max) {
  if (length == 0) throw InvalidInput("sample_training_mask: empty sequence");
  if (!(ratio_min > 0.0 && ratio_min <= ratio_max && ratio_max <= 1.0)) throw InvalidInput("mask ratio range must lie in (0, 1]");
  const double ratio = rng.uniform(ratio_min, ratio_max);
  std::size_t count = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(length)));
  count = std::clamp<std::size_t>(count, 1, length);
  std::vector<std::size_t> idx(length);
  for (std::size_t i = 0; i < length; ++i) idx[i] = i;
  rng.shuffle(idx);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return {idx};
}

std::vector<std::size_t> unmasking_schedule(std::size_t length, std::size_t rounds) {
  if (rounds == 0) throw InvalidInput("unmasking schedule needs at least one round");
  if (rounds > length) throw InvalidInput("more rounds than masked positions");
  std::vector<std::size_t> remaining;
  std::size_t prev = length;
  for (std::size_t r = 1; r <= rounds; ++r) {
    const double c = static_cast<double>(length) * std::cos(std::numbers::pi * static_cast<double>(r) / (2.0 * static_cast<double>(rounds)));
    std::size_t count = static_cast<std::size_t>(std::max(0.0, std::round(c)));
    count = std::min(count, prev - 1);
    count = std::max(count, rounds - r);
    if (r == rounds) count = 0;
    remaining.push_back(count);
    prev = count;
  }
  return remaining;
}

Matrix flow_interpolate(const Matrix& z, const Matrix& noise, const std::vector<double>& tau) {
  if (z.rows != noise.rows || z.cols != noise.cols || tau.size() != z.rows) throw ShapeMismatch("flow_interpolate: shape mismatch");
  Matrix out(z.rows, z.cols);
  for (std::size_t r = 0; r < z.rows; ++r)
    for (std::size_t c = 0; c < z.cols; ++c) out(r, c) = (1.0 - tau[r]) * noise(r, c) + tau[r] * z(r, c);
  return out;
}

ad::Tensor euler_clean(const ad::Tensor& z_tau, const std::vector<double>& tau, const ad::Tensor& v) {
  if (tau.size() != z_tau.rows()) throw ShapeMismatch("euler_clean: one tau per row");
  Matrix w(v.rows(), v.cols());
  for (std::size_t r = 0; r < w.rows; ++r)
    for (std::size_t c = 0; c < w.cols; ++c) w(r, c) = 1.0 - tau[r];
  return ad::add(z_tau, ad::mul(ad::Tensor::constant(std::move(w)), v));
}

ad::Tensor flow_objective(const ad::Tensor& v, const ad::Tensor& target) {
  if (v.rows() == 0) return ad::Tensor::constant(Matrix(1, 1));
  return ad::scale(ad::sum_sq(ad::sub(v, target)), 1.0 / static_cast<double>(v.rows()));
}

Matrix cfg_velocity(const Matrix& v_cond, const Matrix& v_uncond, double omega) {
  if (v_cond.rows != v_uncond.rows || v_cond.cols != v_uncond.cols) throw ShapeMismatch("cfg_velocity: shape mismatch");
  if (omega == 1.0) return v_cond;
  Matrix out(v_cond.rows, v_cond.cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = v_uncond.data[i] + omega * (v_cond.data[i] - v_uncond.data[i]);
  return out;
}

Matrix flatten_tpose(const TPose& tpose) {
  Matrix m(1, kTposeDim);
  for (std::size_t j = 0; j < kNumJoints; ++j)
    for (std::size_t k = 0; k < 3; ++k) m.data[3 * j + k] = tpose.joints[j][k];
  return m;
}

MaskedGenerator::MaskedGenerator(const GenConfig& config, std::uint64_t seed) : config_(config) {
  const std::size_t d = config.latent_dim;
  if (d == 0 || config.heads == 0 || d % config.heads != 0) throw ConfigError("latent width must be a positive multiple of heads");
  if (config.head_repeats == 0 || config.head_width == 0) throw ConfigError("velocity head sizes must be positive");
  if (config.cond_dropout < 0 || config.cond_dropout > 1) throw ConfigError("condition dropout must lie in [0, 1]");
  if (config.lambda_morph_guide < 0) throw ConfigError("lambda_morph_guide must be nonnegative");
  Rng rng(mix_seed(seed, 0x6e11ULL));
  mask_token_ = params_.add("gen.mask_token", rng.normal_matrix(1, d, 0.5));
  tpose_proj_ = nn::Linear::create(params_, "gen.tpose", kTposeDim, d, rng);
  const double out_gain = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(config.blocks, 1)));
  for (std::size_t b = 0; b < config.blocks; ++b) {
    const std::string p = "gen.block" + std::to_string(b);
    Block blk;
    blk.ln1 = nn::LayerNorm::create(params_, p + ".ln1", d);
    blk.q = nn::Linear::create(params_, p + ".q", d, d, rng);
    blk.k = nn::Linear::create(params_, p + ".k", d, d, rng);
    blk.v = nn::Linear::create(params_, p + ".v", d, d, rng);
    blk.o = nn::Linear::create(params_, p + ".o", d, d, rng, out_gain);
    blk.ln2 = nn::LayerNorm::create(params_, p + ".ln2", d);
    blk.cq = nn::Linear::create(params_, p + ".cq", d, d, rng);
    blk.ck = nn::Linear::create(params_, p + ".ck", config.text_dim, d, rng);
    blk.cv = nn::Linear::create(params_, p + ".cv", config.text_dim, d, rng);
    blk.co = nn::Linear::create(params_, p + ".co", d, d, rng, out_gain);
    blk.ln3 = nn::LayerNorm::create(params_, p + ".ln3", d);
    blk.ff1 = nn::Linear::create(params_, p + ".ff1", d, config.ffn_mult * d, rng);
    blk.ff2 = nn::Linear::create(params_, p + ".ff2", config.ffn_mult * d, d, rng, out_gain);
    blocks_.push_back(blk);
  }
  final_ln_ = nn::LayerNorm::create(params_, "gen.final_ln", d);
  const std::size_t w = config.head_width;
  head_z_ = nn::Linear::create(params_, "gen.head.z", d, w, rng);
  head_h_ = nn::Linear::create(params_, "gen.head.h", d, w, rng);
  head_t_ = nn::Linear::create(params_, "gen.head.t", kTimeEmbedWidth, w, rng);
  for (std::size_t b = 0; b < config.head_blocks; ++b) {
    const std::string p = "gen.head.block" + std::to_string(b);
    head_blocks_.emplace_back(nn::Linear::create(params_, p + ".a", w, w, rng),
                              nn::Linear::create(params_, p + ".b", w, w, rng, 0.5));
  }
  head_out_ = nn::Linear::create(params_, "gen.head.out", w, d, rng, 0.5);
  null_text_ = embed::NullTextCondition::create(params_, "gen.null_text", config.text_dim, rng);
}

Context MaskedGenerator::build_context(const std::vector<ad::Tensor>& latents, const std::vector<std::vector<bool>>& masked,
                                       const std::vector<Matrix>& tposes, const std::vector<ad::Tensor>& memory) const {
  const std::size_t n = latents.size();
  if (masked.size() != n || tposes.size() != n || memory.size() != n) throw ShapeMismatch("build_context: batch fields differ in size");
  const std::size_t d = config_.latent_dim;
  std::vector<ad::Tensor> rows;
  std::vector<std::size_t> lengths, mem_lengths;
  for (std::size_t i = 0; i < n; ++i) {
    if (latents[i].cols() != d) throw ShapeMismatch("build_context: latent width mismatch");
    if (latents[i].rows() == 0) throw TooShort("build_context: empty latent sequence");
    if (masked[i].size() != latents[i].rows()) throw ShapeMismatch("build_context: mask length mismatch");
    if (tposes[i].rows != 1 || tposes[i].cols != kTposeDim) throw ShapeMismatch("build_context: T-pose must be 1 x 75");
    if (memory[i].cols() != config_.text_dim || memory[i].rows() == 0) throw ShapeMismatch("build_context: text tokens width mismatch");
    rows.push_back(tpose_proj_(ad::Tensor::constant(tposes[i])));
    rows.push_back(ad::select_rows(latents[i], mask_token_, masked[i]));
    lengths.push_back(latents[i].rows() + 1);
    mem_lengths.push_back(memory[i].rows());
  }
  const ad::Segments segs = ad::pack_segments(lengths);
  const ad::Segments mem_segs = ad::pack_segments(mem_lengths);
  ad::Tensor x = ad::add(ad::concat_rows(rows), ad::Tensor::constant(positional_rows(segs, d)));
  ad::Tensor mem = ad::concat_rows(memory);
  for (const Block& b : blocks_) {
    ad::Tensor a = b.ln1(x);
    x = ad::add(x, b.o(ad::attention(b.q(a), b.k(a), b.v(a), segs, segs, config_.heads)));
    a = b.ln2(x);
    x = ad::add(x, b.co(ad::attention(b.cq(a), b.ck(mem), b.cv(mem), segs, mem_segs, config_.heads)));
    a = b.ln3(x);
    x = ad::add(x, b.ff2(ad::silu(b.ff1(a))));
  }
  return {final_ln_(x), segs};
}

ad::Tensor MaskedGenerator::velocity(const ad::Tensor& z_tau, const std::vector<double>& tau, const ad::Tensor& h) const {
  if (z_tau.rows() != h.rows() || tau.size() != h.rows()) throw ShapeMismatch("velocity: row counts differ");
  std::vector<double> t(tau.size());
  for (std::size_t i = 0; i < tau.size(); ++i) t[i] = kTimeScale * tau[i];
  ad::Tensor temb = ad::Tensor::constant(nn::sinusoidal_embedding(t, kTimeEmbedWidth));
  ad::Tensor a = ad::add(ad::add(head_z_(z_tau), head_h_(h)), head_t_(temb));
  for (const auto& [l1, l2] : head_blocks_) a = ad::add(a, l2(ad::silu(l1(ad::silu(a)))));
  return head_out_(ad::silu(a));
}

TrainingDraws MaskedGenerator::draw(const std::vector<GenSample>& batch, Rng& rng, bool allow_dropout) const {
  TrainingDraws d;
  std::size_t total = 0;
  for (const auto& s : batch) {
    d.masks.push_back(sample_training_mask(s.latents.rows, rng, config_.mask_ratio_min, config_.mask_ratio_max));
    total += d.masks.back().positions.size();
  }
  for (std::size_t i = 0; i < batch.size(); ++i) d.drop_text.push_back(allow_dropout && rng.bernoulli(config_.cond_dropout));
  const std::size_t rows = total * config_.head_repeats;
  d.noise = rng.normal_matrix(rows, config_.latent_dim);
  d.tau.resize(rows);
  for (double& t : d.tau) t = rng.uniform();
  return d;
}

GenLoss MaskedGenerator::loss(const std::vector<GenSample>& batch, const TrainingDraws& draws, const mcm::Mcm* critic) const {
  if (batch.empty()) throw InvalidInput("generator loss: empty batch");
  if (draws.masks.size() != batch.size() || draws.drop_text.size() != batch.size())
    throw ShapeMismatch("generator loss: draws do not match the batch");
  if (!critic && config_.lambda_morph_guide > 0.0)
    throw ConfigError("generator loss: a pretrained morphology critic is required when lambda_morph_guide > 0");

  std::vector<ad::Tensor> latents, memory;
  std::vector<std::vector<bool>> masked;
  std::vector<Matrix> tposes;
  std::vector<std::size_t> hidden_rows, packed_rows, z_lengths;
  std::vector<bool> packed_flags;
  Matrix bones(batch.size(), kNumBones);
  std::size_t ctx_offset = 0, z_offset = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const GenSample& s = batch[i];
    latents.push_back(ad::Tensor::constant(s.latents));
    masked.push_back(draws.masks[i].flags(s.latents.rows));
    tposes.push_back(s.tpose);
    memory.push_back(draws.drop_text[i] ? null_text_.tokens() : ad::Tensor::constant(s.text_tokens));
    for (std::size_t p : draws.masks[i].positions) {
      hidden_rows.push_back(ctx_offset + 1 + p);
      packed_rows.push_back(z_offset + p);
    }
    packed_flags.insert(packed_flags.end(), masked.back().begin(), masked.back().end());
    if (s.bones.cols != kNumBones) throw ShapeMismatch("generator loss: bones must be 1 x 24");
    std::copy(s.bones.data.begin(), s.bones.data.end(), bones.row(i));
    z_lengths.push_back(s.latents.rows);
    ctx_offset += s.latents.rows + 1;
    z_offset += s.latents.rows;
  }
  const std::size_t m = hidden_rows.size();
  const std::size_t reps = config_.head_repeats;
  if (draws.noise.rows != m * reps || draws.tau.size() != m * reps) throw ShapeMismatch("generator loss: noise rows mismatch");

  GenLoss out;
  if (m == 0) {
    out.flow = ad::Tensor::constant(Matrix(1, 1));
    out.total = out.flow;
    return out;
  }

  const Context ctx = build_context(latents, masked, tposes, memory);
  Matrix z_packed(z_offset, config_.latent_dim);
  {
    std::size_t off = 0;
    for (const auto& s : batch) {
      std::copy(s.latents.data.begin(), s.latents.data.end(), z_packed.row(off));
      off += s.latents.rows;
    }
  }
  std::vector<std::size_t> h_idx, z_idx;
  for (std::size_t r = 0; r < reps; ++r) {
    h_idx.insert(h_idx.end(), hidden_rows.begin(), hidden_rows.end());
    z_idx.insert(z_idx.end(), packed_rows.begin(), packed_rows.end());
  }
  const Matrix z_target = rows_of(z_packed, z_idx);
  const Matrix z_tau = flow_interpolate(z_target, draws.noise, draws.tau);
  Matrix target = z_target;
  for (std::size_t i = 0; i < target.size(); ++i) target.data[i] -= draws.noise.data[i];

  ad::Tensor h = ad::gather_rows(ctx.hidden, h_idx);
  ad::Tensor z_tau_t = ad::Tensor::constant(z_tau);
  ad::Tensor v = velocity(z_tau_t, draws.tau, h);
  out.flow = flow_objective(v, ad::Tensor::constant(target));
  out.total = out.flow;

  // Clean estimate from the first draw of every masked row.
  const std::vector<double> tau0(draws.tau.begin(), draws.tau.begin() + static_cast<std::ptrdiff_t>(m));
  ad::Tensor clean_rows = euler_clean(ad::slice_rows(z_tau_t, 0, m), tau0, ad::slice_rows(v, 0, m));
  std::vector<std::size_t> scatter(z_offset, 0);
  for (std::size_t k = 0; k < m; ++k) scatter[packed_rows[k]] = k;
  out.clean = ad::select_rows(ad::Tensor::constant(z_packed), ad::gather_rows(clean_rows, scatter), packed_flags);
  if (critic) {
    out.morph_guide = mcm::morph_guide_loss(*critic, out.clean, ad::pack_segments(z_lengths), bones);
    out.total = ad::add(out.flow, ad::scale(out.morph_guide, config_.lambda_morph_guide));
  }
  return out;
}

ad::Tensor MaskedGenerator::guided_velocity_rows(const Context& cond, const Context& uncond, const Matrix& z, double tau,
                                                 const std::vector<std::size_t>& positions, double omega) const {
  std::vector<std::size_t> idx;
  for (std::size_t p : positions) idx.push_back(1 + p);
  const std::vector<double> taus(positions.size(), tau);
  const ad::Tensor zt = ad::Tensor::constant(z);
  const Matrix vc = velocity(zt, taus, ad::gather_rows(cond.hidden, idx)).value();
  if (omega == 1.0) return ad::Tensor::constant(vc);
  const Matrix vu = velocity(zt, taus, ad::gather_rows(uncond.hidden, idx)).value();
  return ad::Tensor::constant(cfg_velocity(vc, vu, omega));
}

Matrix MaskedGenerator::infer(const embed::TextFeatures& text, const Matrix& tpose, std::size_t length,
                              const InferConfig& cfg, std::uint64_t seed, const VelocityField* field) const {
  if (length == 0) throw InvalidInput("infer: length must be at least 1");
  return infill(Matrix(length, config_.latent_dim), std::vector<bool>(length, true), text, tpose, cfg, seed, field);
}

Matrix MaskedGenerator::infill(const Matrix& latents, const std::vector<bool>& masked, const embed::TextFeatures& text,
                               const Matrix& tpose, const InferConfig& cfg, std::uint64_t seed,
                               const VelocityField* field) const {
  if (latents.cols != config_.latent_dim || masked.size() != latents.rows) throw ShapeMismatch("infill: shape mismatch");
  if (cfg.rounds == 0 || cfg.steps == 0) throw InvalidInput("infill: rounds and steps must be at least 1");
  if (!field && trained_steps == 0) log::warn("generator has no training steps; output will be noise-like");
  ad::NoGradGuard guard;

  Rng rng(seed);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < masked.size(); ++i)
    if (masked[i]) order.push_back(i);
  Matrix z = latents;
  if (order.empty()) return z;
  rng.shuffle(order);
  std::size_t rounds = cfg.rounds;
  if (rounds > order.size()) {
    log::warn("rounds (" + std::to_string(rounds) + ") exceed masked positions (" + std::to_string(order.size()) + "); clamped");
    rounds = order.size();
  }
  const auto schedule = unmasking_schedule(order.size(), rounds);

  const ad::Tensor cond_mem = ad::Tensor::constant(text.tokens());
  const ad::Tensor null_mem = ad::Tensor::constant(null_text_.tokens().value());
  std::vector<bool> still = masked;
  std::size_t filled = 0;
  const double dt = 1.0 / static_cast<double>(cfg.steps);
  for (std::size_t r = 0; r < rounds; ++r) {
    const std::size_t take = order.size() - schedule[r] - filled;
    std::vector<std::size_t> positions(order.begin() + static_cast<std::ptrdiff_t>(filled),
                                       order.begin() + static_cast<std::ptrdiff_t>(filled + take));
    std::sort(positions.begin(), positions.end());
    Matrix state = rng.normal_matrix(positions.size(), config_.latent_dim);

    std::optional<Context> cond, uncond;
    if (!field) {
      const ad::Tensor zt = ad::Tensor::constant(z);
      cond = build_context({zt}, {still}, {tpose}, {cond_mem});
      if (cfg.omega != 1.0) uncond = build_context({zt}, {still}, {tpose}, {null_mem});
    }
    for (std::size_t n = 0; n < cfg.steps; ++n) {
      const double tau = static_cast<double>(n) * dt;
      const Matrix v = field ? (*field)(state, tau, positions)
                             : guided_velocity_rows(*cond, cfg.omega != 1.0 ? *uncond : *cond, state, tau, positions,
                                                    cfg.omega).value();
      if (v.rows != state.rows || v.cols != state.cols) throw ShapeMismatch("infill: velocity field shape mismatch");
      for (std::size_t i = 0; i < state.size(); ++i) state.data[i] += dt * v.data[i];
    }
    for (std::size_t k = 0; k < positions.size(); ++k) {
      std::copy(state.row(k), state.row(k) + state.cols, z.row(positions[k]));
      still[positions[k]] = false;
    }
    filled += take;
  }
  return z;
}

}  // namespace crossmo::gen
