// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <ostream>

#include "rofkit/report.hpp"

namespace rofkit {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string hex_color(double r, double g, double b) {
  auto c = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", c(r), c(g), c(b));
  return buf;
}

// Piecewise-linear approximation of a perceptual dark-to-bright ramp.
std::string ramp(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {0.267, 0.005, 0.329},
      {0.229, 0.322, 0.546},
      {0.128, 0.567, 0.551},
      {0.369, 0.789, 0.383},
      {0.993, 0.906, 0.144},
  }};
  if (!std::isfinite(t)) {
    t = 0.0;
  }
  t = std::clamp(t, 0.0, 1.0) * static_cast<double>(stops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(t), stops.size() - 2);
  const double f = t - static_cast<double>(i);
  const auto &a = stops[i];
  const auto &b = stops[i + 1];
  return hex_color(a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2]));
}

std::string layer_color(std::int64_t layer, std::int64_t n_layers) {
  const double t = n_layers > 1 ? static_cast<double>(layer) / static_cast<double>(n_layers - 1) : 0.0;
  return ramp(0.9 * t);
}

void open_svg(std::ostream &out, double width, double height) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" fill=\"#ffffff\"/>\n";
}

} // namespace

void emit_scatter(std::span<const OffsetVerdict> rows, const RopeConfig &config, std::ostream &out) {
  if (rows.empty()) {
    throw ValidationError("scatter plot needs at least one verdict");
  }
  const auto thetas = theta_schedule(config);
  const Index n_pairs = config.num_pairs();
  std::int64_t n_layers = 1;
  std::map<Index, std::vector<const OffsetVerdict *>> by_pair;
  for (const auto &v : rows) {
    if (v.pair < 0 || v.pair >= n_pairs) {
      throw ValidationError("verdict pair " + std::to_string(v.pair) + " outside the config's rotary pairs");
    }
    n_layers = std::max(n_layers, v.layer + 1);
    if (v.angle_defined) {
      by_pair[v.pair].push_back(&v);
    }
  }

  constexpr double panel_w = 240.0;
  constexpr double panel_h = 180.0;
  constexpr double margin_l = 40.0;
  constexpr double margin_b = 26.0;
  constexpr double margin_t = 20.0;
  constexpr double margin_r = 10.0;
  constexpr Index cols = 4;
  const Index rows_n = (n_pairs + cols - 1) / cols;
  open_svg(out, panel_w * static_cast<double>(cols), panel_h * static_cast<double>(rows_n));

  for (Index i = 0; i < n_pairs; ++i) {
    const auto &points = by_pair[i];
    double max_r = 0.0;
    for (const auto *v : points) {
      max_r = std::max(max_r, v->k_radius);
    }
    const double y_max = max_r > 0.0 ? max_r * 1.05 : 1.0;
    const double ox = panel_w * static_cast<double>(i % cols);
    const double oy = panel_h * static_cast<double>(i / cols);
    const double plot_w = panel_w - margin_l - margin_r;
    const double plot_h = panel_h - margin_t - margin_b;
    auto px = [&](double phi) { return ox + margin_l + phi / kTwoPi * plot_w; };
    auto py = [&](double r) { return oy + margin_t + plot_h * (1.0 - r / y_max); };

    out << "<g class=\"panel\" data-pair=\"" << i << "\" data-x-min=\"0\" data-x-max=\"" << format_real(kTwoPi)
        << "\" data-y-min=\"0\" data-y-max=\"" << format_real(y_max) << "\">\n";
    out << "<text x=\"" << num(ox + margin_l) << "\" y=\"" << num(oy + 14.0)
        << "\" font-size=\"11\" font-family=\"sans-serif\">feature " << i << "</text>\n";
    out << "<rect class=\"frame\" x=\"" << num(ox + margin_l) << "\" y=\"" << num(oy + margin_t) << "\" width=\""
        << num(plot_w) << "\" height=\"" << num(plot_h) << "\" fill=\"none\" stroke=\"#444444\"/>\n";
    for (int tick = 0; tick <= 2; ++tick) {
      const double phi = std::numbers::pi * tick;
      out << "<text x=\"" << num(px(phi) - 6.0) << "\" y=\"" << num(oy + panel_h - 8.0)
          << "\" font-size=\"9\" font-family=\"sans-serif\">" << (tick == 0 ? "0" : tick == 1 ? "pi" : "2pi")
          << "</text>\n";
    }
    out << "<text x=\"" << num(ox + 2.0) << "\" y=\"" << num(oy + margin_t + 8.0)
        << "\" font-size=\"9\" font-family=\"sans-serif\">" << num(y_max) << "</text>\n";
    if (eligible(thetas(i), config.p_max)) {
      const double x = px(lower_bound(thetas(i), config.p_max));
      out << "<line class=\"lower-bound\" x1=\"" << num(x) << "\" y1=\"" << num(oy + margin_t) << "\" x2=\""
          << num(x) << "\" y2=\"" << num(oy + margin_t + plot_h)
          << "\" stroke=\"#000000\" stroke-dasharray=\"4,3\"/>\n";
    }
    for (const auto *v : points) {
      out << "<circle class=\"point\" data-layer=\"" << v->layer << "\" data-head=\"" << v->q_head << "\" cx=\""
          << num(px(v->phi)) << "\" cy=\"" << num(py(v->k_radius)) << "\" r=\"1.8\" fill=\""
          << layer_color(v->layer, n_layers) << "\" fill-opacity=\"0.8\"/>\n";
    }
    out << "</g>\n";
  }
  out << "</svg>\n";
}

void emit_heatmap(const MagnitudeMatrix &matrix, const RopeConfig &config, std::ostream &out) {
  const Index n_layers = matrix.values.rows();
  const Index n_dims = matrix.values.cols();
  if (n_layers == 0 || n_dims == 0) {
    throw ValidationError("heatmap needs a nonempty matrix");
  }
  if (n_dims != config.head_dim) {
    throw ShapeError("heatmap matrix has " + std::to_string(n_dims) + " dims, config head_dim is " +
                     std::to_string(config.head_dim));
  }
  constexpr double cell = 8.0;
  constexpr double margin = 30.0;
  const double width = margin + cell * static_cast<double>(n_dims) + 10.0;
  const double height = margin + cell * static_cast<double>(n_layers) + 10.0;
  open_svg(out, width, height);
  out << "<text x=\"" << num(margin) << "\" y=\"14\" font-size=\"11\" font-family=\"sans-serif\">"
      << to_string(matrix.side) << " " << to_string(matrix.reducer) << "</text>\n";

  const double peak = matrix.values.maxCoeff();
  for (Index l = 0; l < n_layers; ++l) {
    for (Index d = 0; d < n_dims; ++d) {
      const double t = peak > 0.0 ? matrix.values(l, d) / peak : 0.0;
      out << "<rect class=\"cell\" data-layer=\"" << l << "\" data-dim=\"" << d << "\" x=\""
          << num(margin + cell * static_cast<double>(d)) << "\" y=\"" << num(margin + cell * static_cast<double>(l))
          << "\" width=\"" << num(cell) << "\" height=\"" << num(cell) << "\" fill=\"" << ramp(t) << "\"/>\n";
    }
  }

  auto separator = [&](const char *cls, Index after_dim, const char *color) {
    const double x = margin + cell * static_cast<double>(after_dim + 1);
    out << "<line class=\"separator " << cls << "\" x1=\"" << num(x) << "\" y1=\"" << num(margin) << "\" x2=\""
        << num(x) << "\" y2=\"" << num(margin + cell * static_cast<double>(n_layers)) << "\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" stroke-dasharray=\"4,3\"/>\n";
  };
  const Index r = config.rotary_dim;
  if (config.layout == Layout::SlicedFirst) {
    separator("pair-halves", r / 2 - 1, "#ffffff");
    if (r < n_dims) {
      separator("rotary-boundary", r - 1, "#ff0000");
    }
  } else if (r < n_dims) {
    separator("rotary-boundary", n_dims - r - 1, "#ff0000");
  }
  out << "</svg>\n";
}

void emit_attention_heatmap(const AttentionMatrix &attention, std::ostream &out, Index max_cells) {
  const Index n = attention.weights.rows();
  if (n == 0) {
    throw ValidationError("attention heatmap needs a nonempty matrix");
  }
  max_cells = std::max<Index>(1, max_cells);
  const Index stride = (n + max_cells - 1) / max_cells;
  const Index cells = (n + stride - 1) / stride;
  Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(cells, cells);
  for (Index m = 0; m < n; ++m) {
    for (Index j = 0; j <= m; ++j) {
      pooled(m / stride, j / stride) = std::max(pooled(m / stride, j / stride), attention.weights(m, j));
    }
  }
  const double cell = std::max(1.0, 512.0 / static_cast<double>(cells));
  const double side = cell * static_cast<double>(cells);
  open_svg(out, side, side);
  out << "<g class=\"attention\" data-positions=\"" << n << "\" data-stride=\"" << stride << "\">\n";
  const double peak = pooled.maxCoeff();
  for (Index m = 0; m < cells; ++m) {
    for (Index j = 0; j <= m; ++j) {
      const double t = peak > 0.0 ? pooled(m, j) / peak : 0.0;
      out << "<rect x=\"" << num(cell * static_cast<double>(j)) << "\" y=\"" << num(cell * static_cast<double>(m))
          << "\" width=\"" << num(cell) << "\" height=\"" << num(cell) << "\" fill=\"" << ramp(t) << "\"/>\n";
    }
  }
  out << "</g>\n</svg>\n";
}

} // namespace rofkit
