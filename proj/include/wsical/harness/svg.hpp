#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wsical/calibration/ece.hpp"

namespace wsical::harness {

/// Pixel geometry of the reliability plot. The unit square [0,1]^2 maps onto
/// a `plot` x `plot` box whose lower-left corner sits at (left, top + plot).
struct SvgLayout {
  double width = 560;
  double height = 520;
  double left = 70;
  double top = 50;
  double plot = 400;

  double x(double v) const { return left + v * plot; }
  double y(double v) const { return top + (1.0 - v) * plot; }
};

inline std::string xml_escape(std::string_view s) {
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

namespace detail {

inline std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

}  // namespace detail

/// Accuracy bars per bin, the identity diagonal, and the share of samples per
/// bin as a line on the same axis.
inline std::string reliability_svg(std::span<const cal::BinStats> bins, std::string_view title = "",
                                   const SvgLayout& L = {}) {
  using detail::fmt;
  if (bins.empty()) throw std::invalid_argument("reliability_svg: no bins");
  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += fmt("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" viewBox=\"0 0 %g %g\">\n", L.width,
           L.height, L.width, L.height);
  s += fmt("<rect x=\"0\" y=\"0\" width=\"%g\" height=\"%g\" fill=\"white\"/>\n", L.width, L.height);
  if (!title.empty()) {
    s += fmt("<text x=\"%g\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">",
             L.left + L.plot / 2);
    s += xml_escape(title) + "</text>\n";
  }

  s += "<g class=\"grid\" stroke=\"#dddddd\" stroke-width=\"1\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    s += fmt("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\"/>\n", L.x(0), L.y(v), L.x(1), L.y(v));
  }
  s += "</g>\n";

  s += "<g class=\"bars\" fill=\"#4c72b0\" fill-opacity=\"0.8\" stroke=\"#2a4d7f\">\n";
  for (const auto& b : bins) {
    const double acc = b.mean_accuracy.value_or(0.0);
    s += fmt("<rect class=\"bar\" data-bin=\"%zu\" data-count=\"%zu\" x=\"%.4f\" y=\"%.4f\" width=\"%.4f\" "
             "height=\"%.4f\"/>\n",
             b.bin_index, b.count, L.x(b.lower), L.y(acc), L.x(b.upper) - L.x(b.lower), L.y(0) - L.y(acc));
  }
  s += "</g>\n";

  s += fmt("<line class=\"diagonal\" x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#888888\" "
           "stroke-dasharray=\"6,4\" stroke-width=\"1.5\"/>\n",
           L.x(0), L.y(0), L.x(1), L.y(1));

  std::string points;
  for (const auto& b : bins) {
    if (!points.empty()) points += ' ';
    points += fmt("%.4f,%.4f", L.x((b.lower + b.upper) / 2), L.y(b.proportion));
  }
  s += "<polyline class=\"proportion\" fill=\"none\" stroke=\"#dd8452\" stroke-width=\"2\" points=\"" + points +
       "\"/>\n";
  for (const auto& b : bins) {
    s += fmt("<circle class=\"proportion-point\" cx=\"%.4f\" cy=\"%.4f\" r=\"3\" fill=\"#dd8452\"/>\n",
             L.x((b.lower + b.upper) / 2), L.y(b.proportion));
  }

  // Axes, ticks and labels.
  s += fmt("<g class=\"axes\" stroke=\"black\" stroke-width=\"1.5\"><line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" "
           "y2=\"%.2f\"/><line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\"/></g>\n",
           L.x(0), L.y(0), L.x(1), L.y(0), L.x(0), L.y(0), L.x(0), L.y(1));
  s += "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    s += fmt("<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">%.1f</text>\n", L.x(v), L.y(0) + 18, v);
    s += fmt("<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"end\">%.1f</text>\n", L.x(0) - 8, L.y(v) + 4, v);
  }
  s += fmt("<text class=\"x-label\" x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\" font-size=\"14\">Confidence</text>\n",
           L.x(0.5), L.y(0) + 42);
  s += fmt("<text class=\"y-label\" x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\" font-size=\"14\" "
           "transform=\"rotate(-90 %.2f %.2f)\">Accuracy / proportion of samples</text>\n",
           L.left - 45, L.y(0.5), L.left - 45, L.y(0.5));
  const double lx = L.x(0) + 12, ly = L.y(1) + 14;
  s += fmt("<rect x=\"%.2f\" y=\"%.2f\" width=\"12\" height=\"12\" fill=\"#4c72b0\"/>\n", lx, ly - 10);
  s += fmt("<text x=\"%.2f\" y=\"%.2f\">Accuracy</text>\n", lx + 18, ly);
  s += fmt("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#dd8452\" stroke-width=\"2\"/>\n", lx,
           ly + 14, lx + 12, ly + 14);
  s += fmt("<text x=\"%.2f\" y=\"%.2f\">Proportion of samples</text>\n", lx + 18, ly + 18);
  s += "</g>\n</svg>\n";
  return s;
}

inline void render_reliability_svg(std::span<const cal::BinStats> bins, const std::filesystem::path& path,
                                   std::string_view title = "") {
  const std::string svg = reliability_svg(bins, title);
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << svg)) throw std::runtime_error("cannot write " + path.string());
}

struct BarGroup {
  std::string label;
  std::vector<double> means;
  std::vector<double> stds;
};

/// Grouped bar chart with error bars, one colour per series.
inline std::string grouped_bar_svg(const std::vector<BarGroup>& groups, const std::vector<std::string>& series,
                                   std::string_view title, std::string_view y_label) {
  using detail::fmt;
  static const char* colours[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
  double top_value = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.means.size(); ++i) top_value = std::max(top_value, g.means[i] + g.stds[i]);
  }
  top_value = top_value > 0 ? top_value * 1.15 : 1.0;

  const double width = 160.0 + 40.0 + double(groups.size()) * (double(series.size()) * 26.0 + 30.0);
  const double left = 70, top = 50, plot_h = 300;
  const double height = top + plot_h + 50 + 16.0 * double(series.size());
  const double plot_w = width - left - 30;
  auto y = [&](double v) { return top + (1.0 - v / top_value) * plot_h; };

  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += fmt("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" viewBox=\"0 0 %g %g\">\n", width,
           height, width, height);
  s += fmt("<rect x=\"0\" y=\"0\" width=\"%g\" height=\"%g\" fill=\"white\"/>\n", width, height);
  s += fmt("<text x=\"%.2f\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">", width / 2);
  s += xml_escape(title) + "</text>\n";
  s += "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = top_value * i / 4.0;
    s += fmt("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#dddddd\"/>\n", left, y(v), left + plot_w,
             y(v));
    s += fmt("<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"end\">%.3f</text>\n", left - 6, y(v) + 4, v);
  }
  double x = left + 20;
  for (const auto& g : groups) {
    const double group_start = x;
    for (std::size_t i = 0; i < g.means.size(); ++i) {
      const double m = g.means[i], sd = g.stds[i];
      s += fmt("<rect class=\"bar\" x=\"%.2f\" y=\"%.2f\" width=\"22\" height=\"%.2f\" fill=\"%s\"/>\n", x, y(m),
               y(0) - y(m), colours[i % 6]);
      s += fmt("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n", x + 11, y(m - sd), x + 11,
               y(m + sd));
      x += 26;
    }
    s += fmt("<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">", (group_start + x - 4) / 2, y(0) + 18);
    s += xml_escape(g.label) + "</text>\n";
    x += 30;
  }
  s += fmt("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n", left, y(0), left + plot_w,
           y(0));
  s += fmt("<text x=\"20\" y=\"%.2f\" text-anchor=\"middle\" transform=\"rotate(-90 20 %.2f)\">", top + plot_h / 2,
           top + plot_h / 2);
  s += xml_escape(y_label) + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double ly = y(0) + 40 + 16.0 * double(i);
    s += fmt("<rect x=\"%.2f\" y=\"%.2f\" width=\"12\" height=\"12\" fill=\"%s\"/>\n", left, ly - 10, colours[i % 6]);
    s += fmt("<text x=\"%.2f\" y=\"%.2f\">", left + 18, ly) + xml_escape(series[i]) + "</text>\n";
  }
  s += "</g>\n</svg>\n";
  return s;
}

}  // namespace wsical::harness
