// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "crossmo/matrix.hpp"
#include "crossmo/nn.hpp"

namespace crossmo::optim {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

/// First/second moment estimates for one parameter set.
struct AdamState {
  std::int64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  bool operator==(const AdamState&) const = default;
};

/// Bias-corrected adaptive-moment update of a single parameter. `step` is the
/// 1-based step index after increment.
void adam_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, std::int64_t step,
                 const AdamConfig& cfg);

class Adam {
 public:
  Adam(nn::ParamSet params, AdamConfig cfg);

  /// Applies one update from the accumulated gradients (missing gradients
  /// count as zero), then clears them. Throws NumericError on non-finite
  /// gradients without touching any parameter. Returns the pre-clip norm.
  double step();

  const AdamState& state() const { return state_; }
  void set_state(AdamState state);
  AdamConfig& config() { return cfg_; }
  nn::ParamSet& params() { return params_; }

 private:
  nn::ParamSet params_;
  AdamConfig cfg_;
  AdamState state_;
};

}  // namespace crossmo::optim
