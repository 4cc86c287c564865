#pragma once

#include <string>
#include <vector>

namespace expsolve::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  int width = 640;
  int height = 420;
};

/// Polylines with a legend; non-finite or non-positive (on log axes) points
/// are skipped.
std::string line_chart(const std::vector<Series>& series, const PlotOptions& options);

/// One circle per point.
std::string scatter_chart(const Series& points, const PlotOptions& options);

}  // namespace expsolve::svg
