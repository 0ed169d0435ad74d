// SPDX-License-Identifier: Apache-2.0

#include "crossmo/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace crossmo::plot {
namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string line_chart_svg(const std::vector<Series>& series, const ChartOptions& o) {
  const double left = 60, right = 140, top = 36, bottom = 44;
  const double pw = o.width - left - right, ph = o.height - top - bottom;

  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  std::size_t n = 0;
  for (const auto& s : series) {
    for (double v : s.y)
      if (std::isfinite(v)) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    n = std::max(n, s.y.size());
  }
  if (o.reference) {
    ymin = std::min(ymin, *o.reference);
    ymax = std::max(ymax, *o.reference);
  }
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
  const double xmax = n > 1 ? static_cast<double>(n - 1) : 1.0;
  auto sx = [&](double x) { return left + pw * x / xmax; };
  auto sy = [&](double y) { return top + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(o.width) + "\" height=\"" + num(o.height) +
                    "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(o.width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + escape(o.title) + "</text>\n";
  if (o.highlight) {
    const double a = sx(o.highlight->first), b = sx(o.highlight->second);
    svg += "<rect x=\"" + num(std::min(a, b)) + "\" y=\"" + num(top) + "\" width=\"" + num(std::abs(b - a)) + "\" height=\"" +
           num(ph) + "\" fill=\"#fde9c8\"/>\n";
  }
  svg += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ymin + (ymax - ymin) * k / 4.0;
    svg += "<text x=\"" + num(left - 6) + "\" y=\"" + num(sy(v) + 4) + "\" text-anchor=\"end\">" + num(v) + "</text>\n";
    const double xv = xmax * k / 4.0;
    svg += "<text x=\"" + num(sx(xv)) + "\" y=\"" + num(top + ph + 16) + "\" text-anchor=\"middle\">" + num(xv) + "</text>\n";
  }
  svg += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(o.height - 8) + "\" text-anchor=\"middle\">" + escape(o.x_label) +
         "</text>\n";
  svg += "<text x=\"14\" y=\"" + num(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
         num(top + ph / 2) + ")\">" + escape(o.y_label) + "</text>\n";
  if (o.reference) {
    svg += "<line x1=\"" + num(left) + "\" x2=\"" + num(left + pw) + "\" y1=\"" + num(sy(*o.reference)) + "\" y2=\"" +
           num(sy(*o.reference)) + "\" stroke=\"#777\" stroke-dasharray=\"5,4\"/>\n";
  }

  std::size_t color = 0;
  for (const auto& s : series) {
    if (s.y.empty()) continue;
    const char* c = kPalette[color % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      pts += num(sx(static_cast<double>(i))) + "," + num(sy(s.y[i])) + " ";
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(c) + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = top + 14 + 16 * static_cast<double>(color);
    svg += "<line x1=\"" + num(left + pw + 10) + "\" x2=\"" + num(left + pw + 28) + "\" y1=\"" + num(ly - 4) + "\" y2=\"" +
           num(ly - 4) + "\" stroke=\"" + c + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(left + pw + 32) + "\" y=\"" + num(ly) + "\">" + escape(s.label) + "</text>\n";
    ++color;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace crossmo::plot
