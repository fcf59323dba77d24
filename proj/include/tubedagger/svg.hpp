#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "tubedagger/dagger.hpp"
#include "tubedagger/errors.hpp"
#include "tubedagger/reachtube.hpp"

// Self-contained SVG emission: tube slice projections, metrics line charts,
// and sweep boxplots.  No plotting dependency; every chart embeds its source
// numbers in an XML comment so the outputs stay diffable.

namespace tubedagger {

namespace detail {

inline std::string fmt_svg(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string xml_escape(const std::string& text) {
  std::string out;
  for (const char c : text) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

// XML comments must not contain "--"; our embedded data is numeric CSV where
// a double dash cannot occur, but guard anyway.
inline std::string comment_safe(std::string text) {
  std::size_t pos = 0;
  while ((pos = text.find("--", pos)) != std::string::npos) text.replace(pos, 2, "- -");
  return text;
}

// Linear data -> pixel mapping for one axis.
struct AxisMap {
  double lo = 0.0, hi = 1.0;
  double px_lo = 0.0, px_hi = 1.0;

  double operator()(double v) const {
    if (hi == lo) return 0.5 * (px_lo + px_hi);
    return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
  }
};

// Round tick spacing to a 1/2/5 decade so labels stay readable.
inline std::vector<double> axis_ticks(double lo, double hi, int target = 5) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (const double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  std::vector<double> ticks;
  for (double v = std::ceil(lo / step) * step; v <= hi + 0.5 * step; v += step) {
    ticks.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  }
  return ticks;
}

inline std::string rgb_lerp(double t) {
  // Early slices in blue, late ones in orange.
  const auto channel = [&](double a, double b) {
    return static_cast<int>(std::lround(a + (b - a) * t));
  };
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", channel(31, 255), channel(119, 127),
                channel(180, 14));
  return buf;
}

struct SvgCanvas {
  std::string body;
  double width, height;

  SvgCanvas(double w, double h) : width(w), height(h) {}

  void comment(const std::string& text) {
    body += "<!-- " + comment_safe(text) + " -->\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double stroke_width = 1.0) {
    body += "<line x1=\"" + fmt_svg(x1) + "\" y1=\"" + fmt_svg(y1) + "\" x2=\"" + fmt_svg(x2) +
            "\" y2=\"" + fmt_svg(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" +
            fmt_svg(stroke_width) + "\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                double stroke_width = 1.5, const std::string& dash = "") {
    body += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" +
            fmt_svg(stroke_width) + "\"";
    if (!dash.empty()) body += " stroke-dasharray=\"" + dash + "\"";
    body += " points=\"";
    for (const auto& [x, y] : pts) body += fmt_svg(x) + "," + fmt_svg(y) + " ";
    body += "\"/>\n";
  }

  void polygon(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
               double stroke_width = 1.0, const std::string& fill = "none",
               double opacity = 1.0) {
    body += "<polygon fill=\"" + fill + "\" stroke=\"" + stroke + "\" stroke-width=\"" +
            fmt_svg(stroke_width) + "\" opacity=\"" + fmt_svg(opacity) + "\" points=\"";
    for (const auto& [x, y] : pts) body += fmt_svg(x) + "," + fmt_svg(y) + " ";
    body += "\"/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& stroke,
            const std::string& fill = "none") {
    body += "<rect x=\"" + fmt_svg(x) + "\" y=\"" + fmt_svg(y) + "\" width=\"" + fmt_svg(w) +
            "\" height=\"" + fmt_svg(h) + "\" stroke=\"" + stroke + "\" fill=\"" + fill +
            "\"/>\n";
  }

  void text(double x, double y, const std::string& content, double size = 11.0,
            const std::string& anchor = "start", const std::string& color = "#333333") {
    body += "<text x=\"" + fmt_svg(x) + "\" y=\"" + fmt_svg(y) + "\" font-size=\"" +
            fmt_svg(size) + "\" font-family=\"monospace\" text-anchor=\"" + anchor +
            "\" fill=\"" + color + "\">" + xml_escape(content) + "</text>\n";
  }

  std::string str() const {
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt_svg(width) +
                      "\" height=\"" + fmt_svg(height) + "\" viewBox=\"0 0 " + fmt_svg(width) +
                      " " + fmt_svg(height) + "\">\n";
    out += "<rect x=\"0\" y=\"0\" width=\"" + fmt_svg(width) + "\" height=\"" +
           fmt_svg(height) + "\" fill=\"#ffffff\"/>\n";
    out += body;
    out += "</svg>\n";
    return out;
  }
};

// Draw one framed panel with ticks, labels, and light gridlines.
inline void draw_frame(SvgCanvas& svg, const AxisMap& xm, const AxisMap& ym,
                       const std::string& x_label, const std::string& y_label) {
  for (const double t : axis_ticks(xm.lo, xm.hi)) {
    svg.line(xm(t), ym.px_lo, xm(t), ym.px_hi, "#dddddd", 0.5);
    svg.text(xm(t), ym.px_lo + 14.0, fmt_svg(t), 10.0, "middle");
  }
  for (const double t : axis_ticks(ym.lo, ym.hi)) {
    svg.line(xm.px_lo, ym(t), xm.px_hi, ym(t), "#dddddd", 0.5);
    svg.text(xm.px_lo - 6.0, ym(t) + 3.5, fmt_svg(t), 10.0, "end");
  }
  svg.rect(xm.px_lo, ym.px_hi, xm.px_hi - xm.px_lo, ym.px_lo - ym.px_hi, "#333333");
  svg.text(0.5 * (xm.px_lo + xm.px_hi), ym.px_lo + 30.0, x_label, 12.0, "middle");
  svg.text(xm.px_lo, ym.px_hi - 8.0, y_label, 12.0, "start");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tube slice projection
// ---------------------------------------------------------------------------

// Principal axes of the (dim_i, dim_j) shadow of one slice, in state space.
// The slice is the ellipsoid ||A(x - c)|| <= r, i.e. shape matrix
// Sigma = r^2 (A^T A)^{-1}; its orthogonal projection onto a coordinate pair
// is the ellipse whose shape matrix is the corresponding 2x2 submatrix.
struct SliceEllipse {
  double cx = 0.0, cy = 0.0;
  Eigen::Vector2d axis_x;  // first principal semi-axis (data units)
  Eigen::Vector2d axis_y;  // second principal semi-axis
};

inline SliceEllipse slice_projection(const TubeSlice& slice, int dim_i, int dim_j,
                                     double scale = 1.0) {
  const Eigen::Index dim = slice.c.size();
  if (dim_i < 0 || dim_j < 0 || dim_i >= dim || dim_j >= dim || dim_i == dim_j) {
    throw ConfigError("projection dims must be distinct and within the slice dimension");
  }
  const Mat shape = (slice.A.transpose() * slice.A).inverse() * (slice.r * slice.r);
  Eigen::Matrix2d sub;
  sub << shape(dim_i, dim_i), shape(dim_i, dim_j), shape(dim_j, dim_i), shape(dim_j, dim_j);
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(sub);
  SliceEllipse out;
  out.cx = slice.c(dim_i);
  out.cy = slice.c(dim_j);
  const double l0 = std::max(eig.eigenvalues()(0), 0.0);
  const double l1 = std::max(eig.eigenvalues()(1), 0.0);
  out.axis_x = eig.eigenvectors().col(0) * std::sqrt(l0) * scale;
  out.axis_y = eig.eigenvectors().col(1) * std::sqrt(l1) * scale;
  return out;
}

inline std::vector<std::pair<double, double>> ellipse_points(const SliceEllipse& e,
                                                             int segments = 64) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(segments);
  for (int k = 0; k < segments; ++k) {
    const double a = 2.0 * std::numbers::pi * k / segments;
    const Eigen::Vector2d p = Eigen::Vector2d(e.cx, e.cy) + std::cos(a) * e.axis_x +
                              std::sin(a) * e.axis_y;
    pts.emplace_back(p(0), p(1));
  }
  return pts;
}

// Time-ordered 2-D projections of the tube slices, every `every`-th slice,
// colored from blue (tau = 0) to orange (last slice).  Optional overlays draw
// the gate boundaries as scaled ellipses: green at the release ratio
// (beta_minus), yellow at the intervention ratio (beta_plus).
inline std::string plot_tube_svg(const ReachTube& tube, int dim_i, int dim_j, int every,
                                 std::optional<double> beta_minus,
                                 std::optional<double> beta_plus) {
  tube.validate();
  if (every < 1) throw ConfigError("slice subsampling step must be >= 1");
  const Eigen::Index dim = tube.slices.front().c.size();
  if (dim_i < 0 || dim_j < 0 || dim_i >= dim || dim_j >= dim || dim_i == dim_j) {
    throw ConfigError("projection dims must be distinct and within the slice dimension");
  }
  const bool draw_lo = beta_minus.has_value();
  const bool draw_hi = beta_plus.has_value();
  const double lo_scale = beta_minus.value_or(1.0);
  const double hi_scale = beta_plus.value_or(1.0);

  // Collect geometry first to size the viewport.
  struct Shown {
    std::size_t index;
    SliceEllipse full;
  };
  std::vector<Shown> shown;
  for (std::size_t t = 0; t < tube.slices.size(); t += static_cast<std::size_t>(every)) {
    shown.push_back({t, slice_projection(tube.slices[t], dim_i, dim_j)});
  }
  double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
  for (const Shown& s : shown) {
    const double rx = std::abs(s.full.axis_x(0)) + std::abs(s.full.axis_y(0));
    const double ry = std::abs(s.full.axis_x(1)) + std::abs(s.full.axis_y(1));
    x_lo = std::min(x_lo, s.full.cx - rx);
    x_hi = std::max(x_hi, s.full.cx + rx);
    y_lo = std::min(y_lo, s.full.cy - ry);
    y_hi = std::max(y_hi, s.full.cy + ry);
  }
  const double pad_x = 0.05 * std::max(x_hi - x_lo, 1e-9);
  const double pad_y = 0.05 * std::max(y_hi - y_lo, 1e-9);

  detail::SvgCanvas svg(860, 560);
  const detail::AxisMap xm{x_lo - pad_x, x_hi + pad_x, 70.0, 830.0};
  const detail::AxisMap ym{y_lo - pad_y, y_hi + pad_y, 520.0, 40.0};
  svg.comment("tube projection dims=(" + std::to_string(dim_i) + "," + std::to_string(dim_j) +
              ") slices=" + std::to_string(tube.slices.size()) + " every=" +
              std::to_string(every));
  detail::draw_frame(svg, xm, ym, "state[" + std::to_string(dim_i) + "]",
                     "state[" + std::to_string(dim_j) + "]");

  const auto to_px = [&](const std::vector<std::pair<double, double>>& pts) {
    std::vector<std::pair<double, double>> px;
    px.reserve(pts.size());
    for (const auto& [x, y] : pts) px.emplace_back(xm(x), ym(y));
    return px;
  };

  const double denom = shown.size() > 1 ? static_cast<double>(shown.size() - 1) : 1.0;
  for (std::size_t k = 0; k < shown.size(); ++k) {
    const Shown& s = shown[k];
    const std::string color = detail::rgb_lerp(static_cast<double>(k) / denom);
    svg.comment("slice " + std::to_string(s.index) + " tau=" +
                detail::fmt_svg(tube.slices[s.index].tau) + " c=(" + detail::fmt_svg(s.full.cx) +
                "," + detail::fmt_svg(s.full.cy) + ") r=" +
                detail::fmt_svg(tube.slices[s.index].r));
    svg.polygon(to_px(ellipse_points(s.full)), color, 1.2, color, 0.55);
    if (draw_lo) {
      svg.polygon(to_px(ellipse_points(
                      slice_projection(tube.slices[s.index], dim_i, dim_j, lo_scale))),
                  "#2ca02c", 1.0);
    }
    if (draw_hi) {
      svg.polygon(to_px(ellipse_points(
                      slice_projection(tube.slices[s.index], dim_i, dim_j, hi_scale))),
                  "#e6c229", 1.0);
    }
  }
  if (draw_lo) svg.text(700.0, 24.0, "green: release boundary", 11.0, "start", "#2ca02c");
  if (draw_hi) svg.text(700.0, 38.0, "yellow: handover boundary", 11.0, "start", "#b89a10");
  return svg.str();
}

// ---------------------------------------------------------------------------
// Metrics line chart
// ---------------------------------------------------------------------------

// Two stacked panels over episodes: rewards (eval median in blue, collection
// reward in orange) and the novice action share in green.  The full CSV is
// embedded as a comment.
inline std::string plot_metrics_svg(const std::vector<MetricsRecord>& series) {
  if (series.empty()) throw ConfigError("metrics series is empty");
  detail::SvgCanvas svg(860, 560);
  svg.comment("source data\n" + metrics_csv(series));

  double r_lo = 1e300, r_hi = -1e300;
  for (const MetricsRecord& m : series) {
    r_lo = std::min({r_lo, m.eval_reward_median, m.combined_reward});
    r_hi = std::max({r_hi, m.eval_reward_median, m.combined_reward});
  }
  if (r_hi == r_lo) {
    r_lo -= 1.0;
    r_hi += 1.0;
  }
  const double pad = 0.05 * (r_hi - r_lo);
  const double x_hi = static_cast<double>(series.size() - 1);
  const detail::AxisMap xm{0.0, x_hi > 0.0 ? x_hi : 1.0, 70.0, 830.0};
  const detail::AxisMap ym_reward{r_lo - pad, r_hi + pad, 290.0, 40.0};
  const detail::AxisMap ym_pct{0.0, 100.0, 520.0, 350.0};

  detail::draw_frame(svg, xm, ym_reward, "", "reward");
  detail::draw_frame(svg, xm, ym_pct, "episode", "novice action %");

  std::vector<std::pair<double, double>> eval_pts, combined_pts, pct_pts;
  for (const MetricsRecord& m : series) {
    const double x = xm(static_cast<double>(m.episode));
    eval_pts.emplace_back(x, ym_reward(m.eval_reward_median));
    combined_pts.emplace_back(x, ym_reward(m.combined_reward));
    pct_pts.emplace_back(x, ym_pct(m.novice_action_pct));
  }
  svg.polyline(eval_pts, "#1f77b4", 1.8);
  svg.polyline(combined_pts, "#ff7f0e", 1.8);
  svg.polyline(pct_pts, "#2ca02c", 1.8);
  for (const MetricsRecord& m : series) {
    if (m.solved) {
      svg.line(xm(static_cast<double>(m.episode)), ym_reward.px_lo,
               xm(static_cast<double>(m.episode)), ym_reward.px_hi, "#999999", 0.8);
      svg.text(xm(static_cast<double>(m.episode)) + 4.0, 52.0, "solved", 10.0, "start",
               "#666666");
      break;
    }
  }
  svg.text(640.0, 24.0, "blue: eval median", 11.0, "start", "#1f77b4");
  svg.text(640.0, 38.0, "orange: collection reward", 11.0, "start", "#ff7f0e");
  return svg.str();
}

// ---------------------------------------------------------------------------
// Sweep boxplots
// ---------------------------------------------------------------------------

struct BoxGroup {
  std::string label;
  std::vector<double> values;
};

struct BoxStats {
  double lo = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, hi = 0.0;
};

// Linear-interpolation quantiles over the sorted sample.
inline BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw ConfigError("boxplot group must be nonempty");
  std::sort(values.begin(), values.end());
  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t i = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(i);
    if (i + 1 >= values.size()) return values.back();
    return values[i] * (1.0 - frac) + values[i + 1] * frac;
  };
  return {values.front(), quantile(0.25), quantile(0.5), quantile(0.75), values.back()};
}

inline std::string boxplot_svg(const std::vector<BoxGroup>& groups, const std::string& title,
                               const std::string& y_label) {
  if (groups.empty()) throw ConfigError("boxplot needs at least one group");
  detail::SvgCanvas svg(860, 560);
  {
    std::string data = "source data";
    for (const BoxGroup& g : groups) {
      data += "\n" + g.label + ":";
      for (const double v : g.values) data += " " + detail::fmt_svg(v);
    }
    svg.comment(data);
  }
  double lo = 1e300, hi = -1e300;
  for (const BoxGroup& g : groups) {
    for (const double v : g.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi == lo) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.08 * (hi - lo);
  const detail::AxisMap ym{lo - pad, hi + pad, 500.0, 60.0};
  const double panel_lo = 70.0, panel_hi = 830.0;
  for (const double t : detail::axis_ticks(ym.lo, ym.hi)) {
    svg.line(panel_lo, ym(t), panel_hi, ym(t), "#dddddd", 0.5);
    svg.text(panel_lo - 6.0, ym(t) + 3.5, detail::fmt_svg(t), 10.0, "end");
  }
  svg.rect(panel_lo, ym.px_hi, panel_hi - panel_lo, ym.px_lo - ym.px_hi, "#333333");
  svg.text(0.5 * (panel_lo + panel_hi), 28.0, title, 13.0, "middle");
  svg.text(panel_lo, 48.0, y_label, 12.0, "start");

  const double slot = (panel_hi - panel_lo) / static_cast<double>(groups.size());
  const double box_w = std::min(60.0, 0.5 * slot);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const BoxStats s = box_stats(groups[i].values);
    const double cx = panel_lo + slot * (static_cast<double>(i) + 0.5);
    svg.line(cx, ym(s.lo), cx, ym(s.q1), "#333333");
    svg.line(cx, ym(s.q3), cx, ym(s.hi), "#333333");
    svg.line(cx - 0.3 * box_w, ym(s.lo), cx + 0.3 * box_w, ym(s.lo), "#333333");
    svg.line(cx - 0.3 * box_w, ym(s.hi), cx + 0.3 * box_w, ym(s.hi), "#333333");
    svg.rect(cx - 0.5 * box_w, ym(s.q3), box_w, ym(s.q1) - ym(s.q3), "#1f77b4", "#aec7e8");
    svg.line(cx - 0.5 * box_w, ym(s.median), cx + 0.5 * box_w, ym(s.median), "#ff7f0e", 2.0);
    svg.text(cx, 522.0, groups[i].label, 11.0, "middle");
  }
  return svg.str();
}

}  // namespace tubedagger
