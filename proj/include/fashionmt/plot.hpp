// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Hand-written SVG line plots for validation curves.

#pragma once

#include <string>
#include <utility>
#include <vector>

namespace fashionmt {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y), x increasing
};

// One panel: axes with min/max tick labels, one polyline per series, legend.
std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<Series>& series);

}  // namespace fashionmt
