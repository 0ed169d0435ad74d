// SPDX-License-Identifier: Apache-2.0
#pragma once

// Conditional graph VAE over bone-length vectors. Graph nodes are the 24
// bones, linked when they share a joint; each node carries its length plus a
// projection of the species condition, re-concatenated at every layer.

#include <cstdint>

#include "crossmo/autograd.hpp"
#include "crossmo/embeddings.hpp"
#include "crossmo/nn.hpp"
#include "crossmo/skeleton.hpp"

namespace crossmo::cgae {

struct CgaeConfig {
  std::size_t latent_dim = 16;
  std::size_t hidden = 64;
  std::size_t cond_dim = embed::kSpeciesDim;
  std::size_t cond_proj = 16;
  double beta = 1e-3;
};

/// 24 x 24 bone adjacency: shared joint or self.
Matrix bone_graph(const SkeletonTopology& topo);

/// D^{-1/2} A D^{-1/2}.
Matrix normalize_adjacency(const Matrix& adjacency);

/// Applies `adj` to each consecutive block of adj.rows rows of x.
ad::Tensor graph_propagate(const ad::Tensor& x, const Matrix& adj);

/// act(adj * x * w + bias), blockwise over stacked graphs. `linear` skips the
/// activation.
ad::Tensor gcn_layer(const ad::Tensor& x, const Matrix& norm_adj, const ad::Tensor& w, const ad::Tensor& bias,
                     bool linear = false);

/// mu + exp(logvar / 2) * noise
ad::Tensor reparameterize(const ad::Tensor& mu, const ad::Tensor& logvar, const ad::Tensor& noise);

/// Mean over rows of KL(N(mu, exp(logvar)) || N(0, I)).
ad::Tensor gaussian_kl(const ad::Tensor& mu, const ad::Tensor& logvar);

struct Posterior {
  ad::Tensor mu;      // B x d_z
  ad::Tensor logvar;  // B x d_z
};

struct CgaeLoss {
  ad::Tensor total;
  ad::Tensor recon;  // mean over the batch of squared L2
  ad::Tensor kl;
};

class Cgae {
 public:
  Cgae(const CgaeConfig& config, std::uint64_t seed);

  const CgaeConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// bones: B x 24, cond: B x cond_dim.
  Posterior encode(const Matrix& bones, const Matrix& cond) const;
  /// z: B x d_z -> B x 24 nonnegative lengths.
  ad::Tensor decode(const ad::Tensor& z, const Matrix& cond) const;
  CgaeLoss loss(const Matrix& bones, const Matrix& cond, const Matrix& noise) const;

  /// Decodes the posterior mean.
  BoneLengthVector reconstruct(const BoneLengthVector& bones, const embed::SpeciesEmbedding& c) const;
  BoneLengthVector sample_bones(const embed::SpeciesEmbedding& c, std::uint64_t seed) const;
  TPose sample_tpose(const embed::SpeciesEmbedding& c, std::uint64_t seed) const;

 private:
  ad::Tensor condition_nodes(const Matrix& cond) const;

  CgaeConfig config_;
  nn::ParamSet params_;
  Matrix adj_;
  nn::Linear cond_proj_;
  ad::Tensor enc_w1_, enc_b1_, enc_w2_, enc_b2_;
  nn::Linear mu_head_, logvar_head_;
  nn::Linear dec_in_;
  ad::Tensor dec_w1_, dec_b1_, dec_w2_, dec_b2_;
};

}  // namespace crossmo::cgae
