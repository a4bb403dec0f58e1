// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

#include "fashionmt/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

#include "fashionmt/error.hpp"

namespace fashionmt {

namespace {

constexpr double kWidth = 480, kHeight = 320;
constexpr double kLeft = 60, kRight = 150, kTop = 30, kBottom = 45;

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                               "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle") {
  return "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" text-anchor=\"" + anchor +
         "\" font-family=\"sans-serif\" font-size=\"11\">" + escape(s) + "</text>\n";
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const auto [x, y] = s.points[i];
      if (i > 0 && !(x > s.points[i - 1].first))
        fail(ErrorKind::kInvalidArgument, "plot: x values of '" + s.label + "' not increasing");
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) +
                    "\" height=\"" + fmt(kHeight) + "\" viewBox=\"0 0 " + fmt(kWidth) + " " +
                    fmt(kHeight) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += text(kLeft + pw / 2, 18, title);
  // axes
  svg += "<polyline fill=\"none\" stroke=\"black\" points=\"" + fmt(kLeft) + "," + fmt(kTop) + " " +
         fmt(kLeft) + "," + fmt(kTop + ph) + " " + fmt(kLeft + pw) + "," + fmt(kTop + ph) +
         "\"/>\n";
  svg += text(kLeft, kTop + ph + 15, fmt(x0));
  svg += text(kLeft + pw, kTop + ph + 15, fmt(x1));
  svg += text(kLeft + pw / 2, kTop + ph + 32, x_label);
  svg += text(kLeft - 5, kTop + ph, fmt(y0), "end");
  svg += text(kLeft - 5, kTop + 10, fmt(y1), "end");
  svg += "<text x=\"14\" y=\"" + fmt(kTop + ph / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
         "transform=\"rotate(-90 14 " + fmt(kTop + ph / 2) + ")\">" + escape(y_label) +
         "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % std::size(kColors)];
    std::string pts;
    for (const auto& [x, y] : series[k].points) pts += fmt(px(x)) + "," + fmt(py(y)) + " ";
    if (!pts.empty()) pts.pop_back();
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = kTop + 12 + 16 * static_cast<double>(k);
    svg += "<line x1=\"" + fmt(kLeft + pw + 10) + "\" y1=\"" + fmt(ly - 4) + "\" x2=\"" +
           fmt(kLeft + pw + 25) + "\" y2=\"" + fmt(ly - 4) + "\" stroke=\"" + color + "\"/>\n";
    svg += text(kLeft + pw + 30, ly, series[k].label, "start");
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace fashionmt
