// SPDX-License-Identifier: Apache-2.0

#include "crossmo/cgae.hpp"

#include <cmath>

#include "crossmo/errors.hpp"
#include "crossmo/simd.hpp"

namespace crossmo::cgae {

Matrix bone_graph(const SkeletonTopology& topo) {
  const std::size_t n = topo.bone_edges.size();
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const auto [pi, ci] = topo.bone_edges[i];
      const auto [pj, cj] = topo.bone_edges[j];
      if (i == j || pi == pj || pi == cj || ci == pj || ci == cj) a(i, j) = 1.0;
    }
  return a;
}

Matrix normalize_adjacency(const Matrix& adjacency) {
  if (adjacency.rows != adjacency.cols) throw ShapeMismatch("adjacency must be square");
  std::vector<double> inv_sqrt(adjacency.rows);
  for (std::size_t i = 0; i < adjacency.rows; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < adjacency.cols; ++j) d += adjacency(i, j);
    if (d <= 0.0) throw InvalidInput("adjacency has an isolated node");
    inv_sqrt[i] = 1.0 / std::sqrt(d);
  }
  Matrix out = adjacency;
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) *= inv_sqrt[i] * inv_sqrt[j];
  return out;
}

ad::Tensor graph_propagate(const ad::Tensor& x, const Matrix& adj) {
  const std::size_t n = adj.rows;
  if (adj.cols != n || n == 0 || x.rows() % n != 0) throw ShapeMismatch("graph_propagate: rows must be a multiple of the node count");
  const std::size_t blocks = x.rows() / n, c = x.cols();
  const auto& k = simd::kernels();
  Matrix out(x.rows(), c);
  for (std::size_t b = 0; b < blocks; ++b) k.gemm(adj.data.data(), x.value().row(b * n), out.row(b * n), n, c, n, false);
  return ad::record(std::move(out), {x}, [adj, blocks, n, c](ad::Node& self) {
    const Matrix adj_t = transpose(adj);
    Matrix& dx = self.inputs[0]->grad_buffer();
    const auto& kk = simd::kernels();
    for (std::size_t b = 0; b < blocks; ++b) kk.gemm(adj_t.data.data(), self.grad.row(b * n), dx.row(b * n), n, c, n, true);
  });
}

ad::Tensor gcn_layer(const ad::Tensor& x, const Matrix& norm_adj, const ad::Tensor& w, const ad::Tensor& bias,
                     bool linear) {
  if (x.cols() != w.rows()) throw ShapeMismatch("gcn_layer: feature width does not match weights");
  ad::Tensor h = ad::linear(graph_propagate(x, norm_adj), w, bias);
  return linear ? h : ad::softplus(h);
}

ad::Tensor reparameterize(const ad::Tensor& mu, const ad::Tensor& logvar, const ad::Tensor& noise) {
  return ad::add(mu, ad::mul(ad::exp(ad::scale(logvar, 0.5)), noise));
}

ad::Tensor gaussian_kl(const ad::Tensor& mu, const ad::Tensor& logvar) {
  ad::Tensor terms = ad::sub(ad::add(ad::exp(logvar), ad::square(mu)), ad::add_scalar(logvar, 1.0));
  return ad::scale(ad::sum(terms), 0.5 / static_cast<double>(mu.rows()));
}

Cgae::Cgae(const CgaeConfig& config, std::uint64_t seed) : config_(config) {
  if (config.latent_dim == 0 || config.hidden == 0 || config.cond_proj == 0) throw ConfigError("cgae widths must be positive");
  if (config.beta < 0) throw ConfigError("cgae beta must be nonnegative");
  Rng rng(mix_seed(seed, 0xc6aeULL));
  adj_ = normalize_adjacency(bone_graph(canonical_topology()));
  const std::size_t h = config.hidden, p = config.cond_proj;
  cond_proj_ = nn::Linear::create(params_, "cgae.cond", config.cond_dim, p, rng);
  enc_w1_ = params_.add("cgae.enc1.w", nn::scaled_normal(rng, 1 + p, h));
  enc_b1_ = params_.add("cgae.enc1.b", Matrix(1, h));
  enc_w2_ = params_.add("cgae.enc2.w", nn::scaled_normal(rng, h + p, h));
  enc_b2_ = params_.add("cgae.enc2.b", Matrix(1, h));
  mu_head_ = nn::Linear::create(params_, "cgae.mu", kNumBones * h, config.latent_dim, rng, 0.5);
  logvar_head_ = nn::Linear::create(params_, "cgae.logvar", kNumBones * h, config.latent_dim, rng, 0.1);
  dec_in_ = nn::Linear::create(params_, "cgae.dec_in", config.latent_dim + p, kNumBones * h, rng);
  dec_w1_ = params_.add("cgae.dec1.w", nn::scaled_normal(rng, h + p, h));
  dec_b1_ = params_.add("cgae.dec1.b", Matrix(1, h));
  dec_w2_ = params_.add("cgae.dec2.w", nn::scaled_normal(rng, h + p, 1));
  dec_b2_ = params_.add("cgae.dec2.b", Matrix(1, 1, -1.0));
}

ad::Tensor Cgae::condition_nodes(const Matrix& cond) const {
  if (cond.cols != config_.cond_dim) throw ShapeMismatch("cgae: condition width mismatch");
  ad::Tensor proj = cond_proj_(ad::Tensor::constant(cond));
  std::vector<std::size_t> idx(cond.rows * kNumBones);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i / kNumBones;
  return ad::gather_rows(proj, idx);
}

Posterior Cgae::encode(const Matrix& bones, const Matrix& cond) const {
  if (bones.cols != kNumBones || bones.rows != cond.rows) throw ShapeMismatch("cgae.encode: expected B x 24 bones and B conditions");
  const std::size_t batch = bones.rows;
  ad::Tensor cn = condition_nodes(cond);
  ad::Tensor x = ad::Tensor::constant(Matrix(batch * kNumBones, 1, std::vector<double>(bones.data)));
  ad::Tensor h = gcn_layer(ad::concat_cols({x, cn}), adj_, enc_w1_, enc_b1_);
  h = gcn_layer(ad::concat_cols({h, cn}), adj_, enc_w2_, enc_b2_);
  ad::Tensor flat = ad::reshape(h, batch, kNumBones * config_.hidden);
  return {mu_head_(flat), logvar_head_(flat)};
}

ad::Tensor Cgae::decode(const ad::Tensor& z, const Matrix& cond) const {
  if (z.cols() != config_.latent_dim || z.rows() != cond.rows) throw ShapeMismatch("cgae.decode: latent shape mismatch");
  const std::size_t batch = z.rows();
  ad::Tensor proj = cond_proj_(ad::Tensor::constant(cond));
  ad::Tensor h = ad::softplus(dec_in_(ad::concat_cols({z, proj})));
  h = ad::reshape(h, batch * kNumBones, config_.hidden);
  ad::Tensor cn = condition_nodes(cond);
  h = gcn_layer(ad::concat_cols({h, cn}), adj_, dec_w1_, dec_b1_);
  ad::Tensor out = gcn_layer(ad::concat_cols({h, cn}), adj_, dec_w2_, dec_b2_, /*linear=*/true);
  return ad::reshape(ad::softplus(out), batch, kNumBones);
}

CgaeLoss Cgae::loss(const Matrix& bones, const Matrix& cond, const Matrix& noise) const {
  if (noise.rows != bones.rows || noise.cols != config_.latent_dim) throw ShapeMismatch("cgae.loss: noise shape mismatch");
  const Posterior post = encode(bones, cond);
  ad::Tensor z = reparameterize(post.mu, post.logvar, ad::Tensor::constant(noise));
  ad::Tensor diff = ad::sub(decode(z, cond), ad::Tensor::constant(bones));
  ad::Tensor recon = ad::scale(ad::sum_sq(diff), 1.0 / static_cast<double>(bones.rows));
  ad::Tensor kl = gaussian_kl(post.mu, post.logvar);
  return {ad::add(recon, ad::scale(kl, config_.beta)), recon, kl};
}

BoneLengthVector Cgae::reconstruct(const BoneLengthVector& bones, const embed::SpeciesEmbedding& c) const {
  ad::NoGradGuard guard;
  const Matrix b(1, kNumBones, std::vector<double>(bones.lengths.begin(), bones.lengths.end()));
  const Posterior post = encode(b, c.vector);
  const ad::Tensor out = decode(post.mu, c.vector);
  BoneLengthVector r;
  for (std::size_t e = 0; e < kNumBones; ++e) r[e] = out.value().data[e];
  return r;
}

BoneLengthVector Cgae::sample_bones(const embed::SpeciesEmbedding& c, std::uint64_t seed) const {
  ad::NoGradGuard guard;
  Rng rng(seed);
  const ad::Tensor out = decode(ad::Tensor::constant(rng.normal_matrix(1, config_.latent_dim)), c.vector);
  BoneLengthVector r;
  for (std::size_t e = 0; e < kNumBones; ++e) r[e] = out.value().data[e];
  return r;
}

TPose Cgae::sample_tpose(const embed::SpeciesEmbedding& c, std::uint64_t seed) const {
  return forward_kinematics_tpose(sample_bones(c, seed), canonical_topology());
}

}  // namespace crossmo::cgae
