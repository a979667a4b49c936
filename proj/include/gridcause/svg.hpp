#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "gridcause/io.hpp"
#include "gridcause/percolation.hpp"

namespace gridcause::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color;
};

inline std::string escape(const std::string& s) {
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

/// Line chart with x in [0, 1] and y scaled to each series' own maximum when
/// `normalize` is set. Output depends only on the inputs.
inline std::string line_chart(const std::string& title, const std::string& x_label, const std::vector<Series>& series,
                              const std::vector<std::pair<double, std::string>>& markers = {}, bool normalize = false) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  double y_max = 0.0;
  for (const auto& s : series)
    for (double v : s.y) y_max = std::max(y_max, v);
  if (!(y_max > 0.0)) y_max = 1.0;
  auto px = [&](double x) { return io::format_fixed(L + x * pw, 2); };
  auto py = [&](double y) { return io::format_fixed(T + ph - y * ph, 2); };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  out += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  out += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" + escape(title) +
         "</text>\n";
  out += "<line x1=\"" + px(0) + "\" y1=\"" + py(0) + "\" x2=\"" + px(1) + "\" y2=\"" + py(0) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + px(0) + "\" y1=\"" + py(0) + "\" x2=\"" + px(0) + "\" y2=\"" + py(1) + "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double f = t / 5.0;
    out += "<text x=\"" + px(f) + "\" y=\"" + io::format_fixed(T + ph + 18, 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + io::format_fixed(f, 1) + "</text>\n";
    const double yv = normalize ? f : f * y_max;
    out += "<text x=\"" + io::format_fixed(L - 6, 2) + "\" y=\"" + py(f) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + io::format_fixed(yv, 2) + "</text>\n";
  }
  out += "<text x=\"" + px(0.5) + "\" y=\"" + io::format_fixed(H - 10, 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + escape(x_label) + "</text>\n";

  for (const auto& [x, label] : markers) {
    out += "<line x1=\"" + px(x) + "\" y1=\"" + py(0) + "\" x2=\"" + px(x) + "\" y2=\"" + py(1) +
           "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
    out += "<text x=\"" + px(x) + "\" y=\"" + io::format_fixed(T - 4, 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + escape(label) + "</text>\n";
  }
  double legend_y = T + 12;
  for (const auto& s : series) {
    double scale = y_max;
    if (normalize) {
      scale = 0.0;
      for (double v : s.y) scale = std::max(scale, v);
      if (!(scale > 0.0)) scale = 1.0;
    }
    std::string pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
      pts += (i ? " " : "") + px(s.x[i]) + "," + py(s.y[i] / scale);
    out += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    out += "<text x=\"" + io::format_fixed(W - R - 4, 2) + "\" y=\"" + io::format_fixed(legend_y, 2) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" + s.color + "\">" +
           escape(s.label) + "</text>\n";
    legend_y += 14;
  }
  return out + "</svg>\n";
}

/// Strength and susceptibility, each scaled to its maximum, with ρc marked.
inline std::string percolation_chart(const std::string& title, const PercolationCurve& c) {
  return line_chart(title, "fraction of edges removed",
                    {{"strength P", c.removal_fractions, c.strength, "#1f77b4"},
                     {"susceptibility (scaled)", c.removal_fractions, c.susceptibility, "#d62728"}},
                    {{c.rho_c, "rho_c " + io::format_fixed(c.rho_c, 4)}}, true);
}

}  // namespace gridcause::svg
