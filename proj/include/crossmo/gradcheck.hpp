// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central finite-difference verification of analytic gradients. The loss
// closure must rebuild the graph from the current parameter values on every
// call and be deterministic (fixed noise, fixed masks).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crossmo/autograd.hpp"

namespace crossmo::gradcheck {

struct Options {
  double step = 1e-5;
  /// Coordinates sampled across all tensors; every tensor gets at least one.
  std::size_t max_coordinates = 256;
  /// Relative error denominator floor, guards coordinates whose gradient is
  /// essentially zero.
  double floor = 1e-6;
  std::uint64_t seed = 7;
};

struct Report {
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // "tensor[index]"
};

Report check(const std::function<ad::Tensor()>& loss, const std::vector<ad::Tensor>& tensors,
             const std::vector<std::string>& names, const Options& options = {});

}  // namespace crossmo::gradcheck
