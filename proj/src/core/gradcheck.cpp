// SPDX-License-Identifier: Apache-2.0

#include "crossmo/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "crossmo/errors.hpp"
#include "crossmo/rng.hpp"

namespace crossmo::gradcheck {

Report check(const std::function<ad::Tensor()>& loss, const std::vector<ad::Tensor>& tensors,
             const std::vector<std::string>& names, const Options& options) {
  if (names.size() != tensors.size()) throw InvalidInput("gradcheck: one name per tensor");
  std::vector<ad::Tensor> leaves = tensors;
  for (auto& t : leaves) t.zero_grad();
  ad::backward(loss());

  std::size_t total = 0;
  for (const auto& t : leaves) total += t.value().size();
  // Sample coordinates proportionally, at least one per tensor.
  Rng rng(options.seed);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const std::size_t n = leaves[i].value().size();
    if (n == 0) continue;
    std::size_t want = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(static_cast<double>(options.max_coordinates) * static_cast<double>(n) /
                                              static_cast<double>(total))));
    want = std::min(want, n);
    std::vector<std::size_t> idx(n);
    for (std::size_t k = 0; k < n; ++k) idx[k] = k;
    rng.shuffle(idx);
    for (std::size_t k = 0; k < want; ++k) coords.emplace_back(i, idx[k]);
  }

  Report report;
  for (const auto& [ti, k] : coords) {
    ad::Tensor& t = leaves[ti];
    const Matrix& g = t.grad();
    const double analytic = g.empty() ? 0.0 : g.data[k];
    double& x = t.mutable_value().data[k];
    const double saved = x;
    double fp, fm;
    {
      ad::NoGradGuard guard;
      x = saved + options.step;
      fp = loss().item();
      x = saved - options.step;
      fm = loss().item();
    }
    x = saved;
    const double numeric = (fp - fm) / (2.0 * options.step);
    const double abs_err = std::abs(analytic - numeric);
    const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), options.floor});
    ++report.coordinates;
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = names[ti] + "[" + std::to_string(k) + "]";
    }
  }
  for (auto& t : leaves) t.zero_grad();
  return report;
}

}  // namespace crossmo::gradcheck
