#pragma once

// Minimal SVG writers for simplex projections, distance scatter plots and
// bar charts.
//
// Beliefs over k states are drawn with the barycentric embedding into a
// regular k-gon: vertex i sits at angle pi/2 + 2*pi*i/k on the unit circle
// and a belief maps to sum_i b_i * vertex_i. For k = 3 this is the usual
// equilateral-triangle picture of the 2-simplex; for larger k it is a fixed
// linear projection of the (k-1)-simplex.

#include <array>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bsg/error.hpp"
#include "bsg/stats.hpp"

namespace bsg::svg {

inline std::array<double, 2> simplex_vertex(int i, int k) {
  const double theta = std::numbers::pi / 2 + 2 * std::numbers::pi * i / k;
  return {std::cos(theta), std::sin(theta)};
}

inline std::array<double, 2> simplex_projection(const Eigen::VectorXd& b) {
  const int k = static_cast<int>(b.size());
  std::array<double, 2> p{0.0, 0.0};
  for (int i = 0; i < k; ++i) {
    const auto v = simplex_vertex(i, k);
    p[0] += b[i] * v[0];
    p[1] += b[i] * v[1];
  }
  return p;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string rgb(const std::array<double, 3>& c) {
  auto ch = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", ch(c[0]), ch(c[1]), ch(c[2]));
  return buf;
}

inline std::string header(int w, int h) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << ' ' << h << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return s.str();
}

inline std::string escape(const std::string& in) {
  std::string out;
  for (char c : in) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct SimplexPoint {
  Eigen::VectorXd belief;
  std::array<double, 3> color{};
};

inline std::string simplex_scatter(const std::vector<SimplexPoint>& points, int num_states, const std::string& title,
                                   const std::vector<std::string>& vertex_labels = {}, double radius = 1.2) {
  const int size = 520;
  const double half = size / 2.0;
  const double scale = 0.42 * size;
  auto to_px = [&](const std::array<double, 2>& p) { return std::array<double, 2>{half + scale * p[0], half + 12 - scale * p[1]}; };
  std::ostringstream s;
  s << header(size, size);
  s << "<text x=\"" << half << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
    << escape(title) << "</text>\n";
  s << "<polygon fill=\"none\" stroke=\"#888\" stroke-width=\"1\" points=\"";
  for (int i = 0; i < num_states; ++i) {
    const auto v = to_px(simplex_vertex(i, num_states));
    s << num(v[0]) << ',' << num(v[1]) << ' ';
  }
  s << "\"/>\n";
  for (int i = 0; i < num_states; ++i) {
    const auto v = to_px(simplex_vertex(i, num_states));
    const std::string label = i < static_cast<int>(vertex_labels.size()) ? vertex_labels[static_cast<std::size_t>(i)]
                                                                          : std::to_string(i);
    s << "<text x=\"" << num(v[0]) << "\" y=\"" << num(v[1] + (v[1] < half ? -6 : 14))
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << escape(label) << "</text>\n";
  }
  for (const auto& p : points) {
    const auto xy = to_px(simplex_projection(p.belief));
    s << "<circle cx=\"" << num(xy[0]) << "\" cy=\"" << num(xy[1]) << "\" r=\"" << num(radius) << "\" fill=\""
      << rgb(p.color) << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// Scatter of y against x with the least-squares line and its R^2.
inline std::string distance_scatter(const std::vector<double>& x, const std::vector<double>& y,
                                    const stats::LinearFit& fit, const std::string& x_label,
                                    const std::string& y_label, const std::string& title) {
  const int w = 480, h = 400, left = 60, right = 20, top = 36, bottom = 50;
  const double xmax = x.empty() ? 1.0 : std::max(1e-12, *std::max_element(x.begin(), x.end()));
  const double ymax = y.empty() ? 1.0 : std::max(1e-12, *std::max_element(y.begin(), y.end()));
  auto px = [&](double v) { return left + (w - left - right) * v / (1.05 * xmax); };
  auto py = [&](double v) { return h - bottom - (h - top - bottom) * v / (1.05 * ymax); };
  std::ostringstream s;
  s << header(w, h);
  s << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
    << escape(title) << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 14
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape(x_label) << "</text>\n";
  s << "<text x=\"16\" y=\"" << (top + h - bottom) / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"12\" transform=\"rotate(-90 16 " << (top + h - bottom) / 2 << ")\">" << escape(y_label)
    << "</text>\n";
  s << "<text x=\"" << left << "\" y=\"" << h - bottom + 16 << "\" font-family=\"sans-serif\" font-size=\"10\">0</text>\n";
  s << "<text x=\"" << num(px(xmax)) << "\" y=\"" << h - bottom + 16
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << num(xmax) << "</text>\n";
  s << "<text x=\"" << left - 4 << "\" y=\"" << num(py(ymax)) << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
    << "font-size=\"10\">" << num(ymax) << "</text>\n";
  for (std::size_t i = 0; i < x.size(); ++i) {
    s << "<circle cx=\"" << num(px(x[i])) << "\" cy=\"" << num(py(y[i])) << "\" r=\"1.5\" fill=\"#1f77b4\" "
      << "fill-opacity=\"0.5\"/>\n";
  }
  s << "<line x1=\"" << num(px(0)) << "\" y1=\"" << num(py(fit.intercept)) << "\" x2=\"" << num(px(xmax))
    << "\" y2=\"" << num(py(fit.intercept + fit.slope * xmax)) << "\" stroke=\"#d62728\" stroke-width=\"1.5\"/>\n";
  s << "<text x=\"" << left + 10 << "\" y=\"" << top + 14 << "\" font-family=\"sans-serif\" font-size=\"12\">R² = "
    << num(fit.r2) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

inline std::string bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                             const std::string& title, const std::string& y_label) {
  const int bar = 56, gap = 16, left = 70, top = 36, bottom = 70, h = 360;
  const int w = left + static_cast<int>(labels.size()) * (bar + gap) + gap;
  const double vmax = values.empty() ? 1.0 : std::max(1e-300, *std::max_element(values.begin(), values.end()));
  std::ostringstream s;
  s << header(w, h);
  s << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
    << escape(title) << "</text>\n";
  s << "<text x=\"16\" y=\"" << (top + h - bottom) / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"12\" transform=\"rotate(-90 16 " << (top + h - bottom) / 2 << ")\">" << escape(y_label)
    << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double x = left + gap + static_cast<double>(i) * (bar + gap);
    const double bh = (h - top - bottom) * values[i] / vmax;
    s << "<rect x=\"" << num(x) << "\" y=\"" << num(h - bottom - bh) << "\" width=\"" << bar << "\" height=\""
      << num(bh) << "\" fill=\"#4c72b0\"/>\n";
    s << "<text x=\"" << num(x + bar / 2.0) << "\" y=\"" << num(h - bottom - bh - 4)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"9\">" << num(values[i]) << "</text>\n";
    s << "<text x=\"" << num(x + bar / 2.0) << "\" y=\"" << h - bottom + 14
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\" transform=\"rotate(-35 "
      << num(x + bar / 2.0) << ' ' << h - bottom + 14 << ")\">" << escape(labels[i]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << content;
}

}  // namespace bsg::svg
