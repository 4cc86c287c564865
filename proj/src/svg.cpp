#include "expsolve/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace expsolve::svg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape_xml(const std::string& s) {
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

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Axis {
  bool log = false;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  bool usable(double v) const { return std::isfinite(v) && (!log || v > 0.0); }
  double t(double v) const { return log ? std::log10(v) : v; }
  void include(double v) {
    if (!usable(v)) return;
    lo = std::min(lo, t(v));
    hi = std::max(hi, t(v));
  }
  void settle() {
    if (!std::isfinite(lo)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
  double label_value(double tv) const { return log ? std::pow(10.0, tv) : tv; }
};

class Canvas {
 public:
  Canvas(const PlotOptions& options, Axis x, Axis y) : opt_(options), x_(x), y_(y) {
    x_.settle();
    y_.settle();
  }

  double px(double v) const {
    return kLeft + (x_.t(v) - x_.lo) / (x_.hi - x_.lo) * (opt_.width - kLeft - kRight);
  }
  double py(double v) const {
    return opt_.height - kBottom -
           (y_.t(v) - y_.lo) / (y_.hi - y_.lo) * (opt_.height - kTop - kBottom);
  }
  bool usable(double x, double y) const { return x_.usable(x) && y_.usable(y); }

  void frame(std::ostringstream& out) const {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt_.width << "\" height=\""
        << opt_.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const double x0 = kLeft, x1 = opt_.width - kRight;
    const double y0 = opt_.height - kBottom, y1 = kTop;
    out << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0 << "\" height=\""
        << y0 - y1 << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double tx = x_.lo + (x_.hi - x_.lo) * i / 4.0;
      const double gx = x0 + (x1 - x0) * i / 4.0;
      out << "<text x=\"" << gx << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
          << fmt(x_.label_value(tx)) << "</text>\n";
      const double ty = y_.lo + (y_.hi - y_.lo) * i / 4.0;
      const double gy = y0 - (y0 - y1) * i / 4.0;
      out << "<text x=\"" << x0 - 6 << "\" y=\"" << gy + 4 << "\" text-anchor=\"end\">"
          << fmt(y_.label_value(ty)) << "</text>\n";
    }
    out << "<text x=\"" << opt_.width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">"
        << escape_xml(opt_.title) << "</text>\n";
    out << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << opt_.height - 8
        << "\" text-anchor=\"middle\">" << escape_xml(opt_.x_label) << "</text>\n";
    out << "<text x=\"14\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << (y0 + y1) / 2 << ")\">" << escape_xml(opt_.y_label) << "</text>\n";
  }

  static constexpr double kLeft = 70;
  static constexpr double kRight = 20;
  static constexpr double kTop = 30;
  static constexpr double kBottom = 45;

 private:
  PlotOptions opt_;
  Axis x_;
  Axis y_;
};

}  // namespace

std::string line_chart(const std::vector<Series>& series, const PlotOptions& options) {
  Axis x{options.log_x}, y{options.log_y};
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (x.usable(s.x[i]) && y.usable(s.y[i])) {
        x.include(s.x[i]);
        y.include(s.y[i]);
      }
    }
  }
  const Canvas canvas(options, x, y);
  std::ostringstream out;
  canvas.frame(out);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (canvas.usable(s.x[i], s.y[i])) out << canvas.px(s.x[i]) << ',' << canvas.py(s.y[i]) << ' ';
    }
    out << "\"/>\n";
    const double ly = Canvas::kTop + 14 + 16 * static_cast<double>(k);
    out << "<line x1=\"" << options.width - 170 << "\" y1=\"" << ly - 4 << "\" x2=\""
        << options.width - 150 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << options.width - 145 << "\" y=\"" << ly << "\">" << escape_xml(s.label)
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string scatter_chart(const Series& points, const PlotOptions& options) {
  Axis x{options.log_x}, y{options.log_y};
  for (std::size_t i = 0; i < std::min(points.x.size(), points.y.size()); ++i) {
    if (x.usable(points.x[i]) && y.usable(points.y[i])) {
      x.include(points.x[i]);
      y.include(points.y[i]);
    }
  }
  const Canvas canvas(options, x, y);
  std::ostringstream out;
  canvas.frame(out);
  for (std::size_t i = 0; i < std::min(points.x.size(), points.y.size()); ++i) {
    if (!canvas.usable(points.x[i], points.y[i])) continue;
    out << "<circle cx=\"" << canvas.px(points.x[i]) << "\" cy=\"" << canvas.py(points.y[i])
        << "\" r=\"1.8\" fill=\"" << kPalette[0] << "\" fill-opacity=\"0.5\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace expsolve::svg
