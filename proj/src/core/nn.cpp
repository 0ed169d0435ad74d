// SPDX-License-Identifier: Apache-2.0

#include "crossmo/nn.hpp"

#include <cmath>
#include <cstring>

#include "crossmo/errors.hpp"
#include "crossmo/optim.hpp"
#include "crossmo/simd.hpp"

namespace crossmo {

std::uint64_t stable_hash(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over the combination
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace nn {

ad::Tensor ParamSet::add(std::string name, Matrix init) {
  for (const auto& e : entries_)
    if (e.name == name) throw ConfigError("duplicate parameter name: " + name);
  ad::Tensor t = ad::Tensor::parameter(std::move(init));
  entries_.push_back({std::move(name), t});
  return t;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.value().size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParamSet::set_trainable(bool trainable) {
  for (auto& e : entries_) {
    e.tensor.set_requires_grad(trainable);
    if (!trainable) e.tensor.zero_grad();
  }
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& e : entries_) {
    for (double v : e.tensor.value().data) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

void ParamSet::copy_values_from(const ParamSet& other) {
  if (other.entries_.size() != entries_.size()) throw ShapeMismatch("copy_values_from: parameter count differs");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const Matrix& src = other.entries_[i].tensor.value();
    Matrix& dst = entries_[i].tensor.mutable_value();
    if (other.entries_[i].name != entries_[i].name || src.rows != dst.rows || src.cols != dst.cols)
      throw ShapeMismatch("copy_values_from: parameter " + entries_[i].name + " differs");
    dst = src;
  }
}

ParamSet ParamSet::join(const std::vector<const ParamSet*>& sets) {
  ParamSet out;
  for (const ParamSet* s : sets) out.entries_.insert(out.entries_.end(), s->entries_.begin(), s->entries_.end());
  return out;
}

Matrix scaled_normal(Rng& rng, std::size_t fan_in, std::size_t fan_out, double gain) {
  return rng.normal_matrix(fan_in, fan_out, gain / std::sqrt(static_cast<double>(fan_in)));
}

Linear Linear::create(ParamSet& params, const std::string& name, std::size_t in, std::size_t out,
                      Rng& rng, double gain, bool with_bias) {
  Linear l;
  l.weight = params.add(name + ".w", scaled_normal(rng, in, out, gain));
  if (with_bias) l.bias = params.add(name + ".b", Matrix(1, out));
  return l;
}

LayerNorm LayerNorm::create(ParamSet& params, const std::string& name, std::size_t width) {
  LayerNorm ln;
  ln.gamma = params.add(name + ".g", Matrix(1, width, 1.0));
  ln.beta = params.add(name + ".b", Matrix(1, width));
  return ln;
}

Matrix sinusoidal_embedding(const std::vector<double>& positions, std::size_t width, double max_period) {
  if (width % 2 != 0) throw InvalidInput("sinusoidal_embedding: width must be even");
  const std::size_t half = width / 2;
  Matrix out(positions.size(), width);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(max_period) * static_cast<double>(k) / static_cast<double>(half));
      out(i, k) = std::sin(positions[i] * freq);
      out(i, half + k) = std::cos(positions[i] * freq);
    }
  }
  return out;
}

}  // namespace nn

namespace optim {

void adam_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, std::int64_t step,
                 const AdamConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad.data[i];
    m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g;
    v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m.data[i] / bc1;
    const double vhat = v.data[i] / bc2;
    param.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

Adam::Adam(nn::ParamSet params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& e : params_.entries()) {
    state_.m.emplace_back(e.tensor.rows(), e.tensor.cols());
    state_.v.emplace_back(e.tensor.rows(), e.tensor.cols());
  }
}

void Adam::set_state(AdamState state) {
  if (state.m.size() != state_.m.size() || state.v.size() != state_.v.size())
    throw ShapeMismatch("Adam::set_state: parameter count differs");
  for (std::size_t i = 0; i < state.m.size(); ++i)
    if (state.m[i].rows != state_.m[i].rows || state.m[i].cols != state_.m[i].cols ||
        state.v[i].rows != state_.v[i].rows || state.v[i].cols != state_.v[i].cols)
      throw ShapeMismatch("Adam::set_state: moment shape differs");
  state_ = std::move(state);
}

double Adam::step() {
  auto& entries = params_.entries();
  double sq = 0.0;
  for (const auto& e : entries) {
    const Matrix& g = e.tensor.grad();
    if (g.empty()) continue;
    if (!all_finite(g)) throw NumericError("non-finite gradient in parameter " + e.name);
    sq += simd::kernels().sum_sq(g.data.data(), g.size());
  }
  const double norm = std::sqrt(sq);
  const double factor = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++state_.step;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ad::Tensor& t = entries[i].tensor;
    Matrix g = t.grad();
    if (factor != 1.0 && !g.empty()) simd::kernels().scale(factor, g.data.data(), g.size());
    adam_update(t.mutable_value(), g, state_.m[i], state_.v[i], state_.step, cfg_);
    t.zero_grad();
  }
  return norm;
}

}  // namespace optim
}  // namespace crossmo
