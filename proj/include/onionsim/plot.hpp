#pragma once

// CDF plots with confidence bands, written as SVG plus the plotted points.

#include <string>
#include <vector>

#include "onionsim/common.hpp"
#include "onionsim/stats.hpp"

namespace onionsim {

struct plot_series {
  std::string label;
  true_estimate estimate;
};

struct plot_style {
  bool tail_log = false;
  std::string x_label = "value";
  int width = 640;
  int height = 420;
};

struct plot_output {
  std::string svg;
  std::string points_csv;
  json metadata;
};

// -log10(1 - q), so 0.9 -> 1, 0.99 -> 2, 0.999 -> 3; q = 1 is clamped.
inline double tail_log_y(double q) { return -std::log10(std::max(1.0 - q, 1e-6)); }

inline true_estimate parse_estimate_csv(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "q,mu,sigma,delta,epsilon,ci_lo,ci_hi,n,alpha")
    throw data_error(where + ": not an estimate CSV");
  true_estimate est;
  bool all_ci = true;
  auto num = [&](const std::string& s) {
    if (s.empty())
      return std::nan("");
    try {
      return std::stod(s);
    } catch (const std::exception&) {
      throw data_error(where + ": bad number '" + s + "'");
    }
  };
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    const auto f = split(line, ',');
    if (f.size() != 9)
      throw data_error(where + ": expected 9 columns");
    est.quantiles.push_back(num(f[0]));
    est.mu.push_back(num(f[1]));
    est.sigma.push_back(num(f[2]));
    est.delta.push_back(num(f[3]));
    est.epsilon.push_back(num(f[4]));
    est.ci_lo.push_back(num(f[5]));
    est.ci_hi.push_back(num(f[6]));
    est.networks = static_cast<std::size_t>(num(f[7]));
    est.alpha = num(f[8]);
    all_ci = all_ci && !std::isnan(est.epsilon.back());
  }
  est.has_ci = all_ci && !est.quantiles.empty();
  return est;
}

/// CDF of mu(q) against q with a shaded [ci_lo, ci_hi] band per series.
inline plot_output render_cdf_plot(const std::vector<plot_series>& series, const plot_style& style) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_max = 1.0;
  auto y_of = [&](double q) { return style.tail_log ? tail_log_y(q) : q; };
  for (const auto& s : series) {
    for (std::size_t k = 0; k < s.estimate.quantiles.size(); ++k) {
      for (double x : {s.estimate.mu[k], s.estimate.ci_lo[k], s.estimate.ci_hi[k]})
        if (std::isfinite(x)) {
          x_min = std::min(x_min, x);
          x_max = std::max(x_max, x);
        }
      y_max = std::max(y_max, y_of(s.estimate.quantiles[k]));
    }
  }
  if (!std::isfinite(x_min)) {
    x_min = 0.0;
    x_max = 1.0;
  }
  if (x_max <= x_min)
    x_max = x_min + 1.0;

  const double left = 60, right = 20, top = 20, bottom = 50;
  const double pw = style.width - left - right, ph = style.height - top - bottom;
  auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * pw; };
  auto py = [&](double y) { return top + ph - y / y_max * ph; };
  auto coord = [](double v) { return format_fixed(v, 2); };

  plot_output out;
  out.points_csv = "label,q,y,mu,ci_lo,ci_hi\n";
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(style.width) + "\" height=\"" +
         std::to_string(style.height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<line x1=\"" + coord(left) + "\" y1=\"" + coord(top + ph) + "\" x2=\"" + coord(left + pw) + "\" y2=\"" + coord(top + ph) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + coord(left) + "\" y1=\"" + coord(top) + "\" x2=\"" + coord(left) + "\" y2=\"" + coord(top + ph) +
         "\" stroke=\"black\"/>\n";
  const std::string y_label = style.tail_log ? "cumulative fraction (tail-log)" : "cumulative fraction";
  svg += "<text x=\"" + coord(left + pw / 2) + "\" y=\"" + coord(style.height - 10.0) + "\" text-anchor=\"middle\">" + style.x_label +
         "</text>\n";
  svg += "<text x=\"15\" y=\"" + coord(top + ph / 2) + "\" transform=\"rotate(-90 15 " + coord(top + ph / 2) +
         ")\" text-anchor=\"middle\">" + y_label + "</text>\n";
  svg += "<text x=\"" + coord(left - 5) + "\" y=\"" + coord(top + ph + 15) + "\" text-anchor=\"end\">" + format_double(x_min) + "</text>\n";
  svg += "<text x=\"" + coord(left + pw) + "\" y=\"" + coord(top + ph + 15) + "\" text-anchor=\"end\">" + format_double(x_max) + "</text>\n";

  json labels = json::array();
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const auto& e = s.estimate;
    const char* color = palette[si % (sizeof(palette) / sizeof(palette[0]))];
    std::string band, upper, line;
    for (std::size_t k = 0; k < e.quantiles.size(); ++k) {
      const double y = y_of(e.quantiles[k]);
      out.points_csv += s.label + ',' + format_double(e.quantiles[k]) + ',' + format_double(y) + ',' + format_double(e.mu[k]) + ',' +
                        format_double(e.ci_lo[k]) + ',' + format_double(e.ci_hi[k]) + '\n';
      line += coord(px(e.mu[k])) + ',' + coord(py(y)) + ' ';
      if (e.has_ci) {
        band += coord(px(e.ci_lo[k])) + ',' + coord(py(y)) + ' ';
        upper = coord(px(e.ci_hi[k])) + ',' + coord(py(y)) + ' ' + upper;
      }
    }
    if (e.has_ci)
      svg += "<polygon points=\"" + band + upper + "\" fill=\"" + color + "\" fill-opacity=\"0.25\" stroke=\"none\"/>\n";
    svg += "<polyline points=\"" + line + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    const double ly = top + 15.0 + 18.0 * static_cast<double>(si);
    svg += "<rect x=\"" + coord(left + pw - 150) + "\" y=\"" + coord(ly - 10) + "\" width=\"12\" height=\"12\" fill=\"" + color + "\"/>\n";
    svg += "<text x=\"" + coord(left + pw - 132) + "\" y=\"" + coord(ly) + "\">" + s.label + "</text>\n";
    labels.push_back(s.label);
  }
  svg += "</svg>\n";
  out.svg = std::move(svg);
  out.metadata = {{"y_axis", style.tail_log ? "tail-log" : "linear"}, {"x_label", style.x_label}, {"legend", labels}};
  return out;
}

}  // namespace onionsim
