// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossmo/autograd.hpp"
#include "crossmo/rng.hpp"

namespace crossmo::nn {

struct NamedParam {
  std::string name;
  ad::Tensor tensor;
};

/// Ordered parameter registry. The order is the serialisation order.
class ParamSet {
 public:
  ad::Tensor add(std::string name, Matrix init);

  std::vector<NamedParam>& entries() { return entries_; }
  const std::vector<NamedParam>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Frozen sets still pass gradients to their inputs but never receive any.
  void set_trainable(bool trainable);

  /// FNV digest of every value; equal digests mean bit-identical weights.
  std::uint64_t checksum() const;

  /// Copies values from another set with identical names and shapes.
  void copy_values_from(const ParamSet& other);

  /// Concatenation of several sets, sharing the same tensors.
  static ParamSet join(const std::vector<const ParamSet*>& sets);

 private:
  std::vector<NamedParam> entries_;
};

/// Gaussian init scaled by 1/sqrt(fan_in).
Matrix scaled_normal(Rng& rng, std::size_t fan_in, std::size_t fan_out, double gain = 1.0);

struct Linear {
  ad::Tensor weight;
  ad::Tensor bias;

  static Linear create(ParamSet& params, const std::string& name, std::size_t in, std::size_t out,
                       Rng& rng, double gain = 1.0, bool with_bias = true);
  ad::Tensor operator()(const ad::Tensor& x) const { return ad::linear(x, weight, bias); }
  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

struct LayerNorm {
  ad::Tensor gamma;
  ad::Tensor beta;

  static LayerNorm create(ParamSet& params, const std::string& name, std::size_t width);
  ad::Tensor operator()(const ad::Tensor& x) const { return ad::layer_norm(x, gamma, beta); }
};

/// Sinusoidal features of a scalar, [sin(w_k x), cos(w_k x)] with
/// geometrically spaced frequencies.
Matrix sinusoidal_embedding(const std::vector<double>& positions, std::size_t width,
                            double max_period = 10000.0);

}  // namespace crossmo::nn
