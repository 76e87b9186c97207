#include "factorflow/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace factorflow {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string render_line_chart(const std::vector<Series>& series, const SvgChartOptions& opts) {
  const double ml = 70, mr = 20, mt = opts.title.empty() ? 20 : 42, mb = 55;
  const double pw = opts.width - ml - mr, ph = opts.height - mt - mb;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      double x = opts.log_x ? std::log10(s.x[i]) : s.x[i];
      double e = (i < s.stderr_.size()) ? s.stderr_[i] : 0.0;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, s.mean[i] - e);
      ymax = std::max(ymax, s.mean[i] + e);
    }
  if (!(xmin <= xmax)) { xmin = 0; xmax = 1; }
  if (!(ymin <= ymax)) { ymin = 0; ymax = 1; }
  if (xmax == xmin) { xmax += 0.5; xmin -= 0.5; }
  if (ymax == ymin) { ymax += 0.5; ymin -= 0.5; }
  double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(opts.width) +
         "\" height=\"" + std::to_string(opts.height) + "\" viewBox=\"0 0 " +
         std::to_string(opts.width) + " " + std::to_string(opts.height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!opts.title.empty())
    out += "<text x=\"" + num(opts.width / 2.0) +
           "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
           opts.title + "</text>\n";

  // axes + ticks
  out += "<g stroke=\"#333\" stroke-width=\"1\">\n";
  out += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt + ph) + "\" x2=\"" + num(ml + pw) +
         "\" y2=\"" + num(mt + ph) + "\"/>\n";
  out += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt) + "\" x2=\"" + num(ml) + "\" y2=\"" +
         num(mt + ph) + "\"/>\n</g>\n";
  out += "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  const int nticks = 5;
  for (int i = 0; i <= nticks; ++i) {
    double fx = xmin + (xmax - xmin) * i / nticks;
    double fy = ymin + (ymax - ymin) * i / nticks;
    std::string xl = opts.log_x ? ("1e" + num(fx)) : num(fx);
    out += "<text x=\"" + num(px(fx)) + "\" y=\"" + num(mt + ph + 16) +
           "\" text-anchor=\"middle\">" + xl + "</text>\n";
    out += "<text x=\"" + num(ml - 6) + "\" y=\"" + num(py(fy) + 4) +
           "\" text-anchor=\"end\">" + num(fy) + "</text>\n";
    out += "<line x1=\"" + num(px(fx)) + "\" y1=\"" + num(mt + ph) + "\" x2=\"" + num(px(fx)) +
           "\" y2=\"" + num(mt + ph + 4) + "\" stroke=\"#333\"/>\n";
  }
  if (!opts.x_label.empty())
    out += "<text x=\"" + num(ml + pw / 2) + "\" y=\"" + num(opts.height - 12.0) +
           "\" text-anchor=\"middle\" font-size=\"13\">" + opts.x_label + "</text>\n";
  if (!opts.y_label.empty())
    out += "<text x=\"16\" y=\"" + num(mt + ph / 2) +
           "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 " +
           num(mt + ph / 2) + ")\">" + opts.y_label + "</text>\n";
  out += "</g>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % (sizeof kPalette / sizeof kPalette[0])];
    // error bars
    for (std::size_t i = 0; i < s.x.size() && i < s.stderr_.size(); ++i) {
      if (s.stderr_[i] <= 0) continue;
      double x = opts.log_x ? std::log10(s.x[i]) : s.x[i];
      out += "<line x1=\"" + num(px(x)) + "\" y1=\"" + num(py(s.mean[i] - s.stderr_[i])) +
             "\" x2=\"" + num(px(x)) + "\" y2=\"" + num(py(s.mean[i] + s.stderr_[i])) +
             "\" stroke=\"" + color + "\" stroke-width=\"1\"/>\n";
    }
    if (s.x.size() > 1) {
      std::string pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        double x = opts.log_x ? std::log10(s.x[i]) : s.x[i];
        pts += num(px(x)) + "," + num(py(s.mean[i])) + " ";
      }
      out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
             "\" stroke-width=\"1.6\" points=\"" + pts + "\"/>\n";
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      double x = opts.log_x ? std::log10(s.x[i]) : s.x[i];
      out += "<circle cx=\"" + num(px(x)) + "\" cy=\"" + num(py(s.mean[i])) +
             "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    // legend entry
    double ly = mt + 14.0 * (si + 1);
    out += "<line x1=\"" + num(ml + pw - 130) + "\" y1=\"" + num(ly) + "\" x2=\"" +
           num(ml + pw - 110) + "\" y2=\"" + num(ly) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + num(ml + pw - 104) + "\" y=\"" + num(ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + s.label + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

void emit_svg(const std::vector<Series>& series, const std::string& path,
              const SvgChartOptions& opts) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << render_line_chart(series, opts);
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace factorflow
