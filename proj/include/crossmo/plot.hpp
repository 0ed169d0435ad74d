// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal SVG line charts for inspecting trajectories and seams without a
// plotting stack.

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace crossmo::plot {

struct Series {
  std::string label;
  std::vector<double> y;
};

struct ChartOptions {
  std::string title;
  std::string x_label = "frame";
  std::string y_label;
  /// Shaded x interval, e.g. the generated span of a transition.
  std::optional<std::pair<double, double>> highlight;
  /// Dashed horizontal reference line.
  std::optional<double> reference;
  double width = 800;
  double height = 360;
};

/// Series share the x axis 0, 1, 2, ...; empty series are skipped.
std::string line_chart_svg(const std::vector<Series>& series, const ChartOptions& options);

}  // namespace crossmo::plot
