#pragma once

#include <string>
#include <vector>

namespace factorflow {

/// One line of a chart: points (x, mean) with optional standard-error bars.
struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> stderr_;  ///< empty or same length as x
};

struct SvgChartOptions {
  int width = 720;
  int height = 460;
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
};

/// Self-contained SVG line chart (no external renderer).
std::string render_line_chart(const std::vector<Series>& series, const SvgChartOptions& opts);
void emit_svg(const std::vector<Series>& series, const std::string& path,
              const SvgChartOptions& opts);

}  // namespace factorflow
