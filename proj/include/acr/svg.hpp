#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "acr/csv.hpp"

namespace acr {

struct SvgSeries {
  std::string label;
  std::string color;
  std::vector<double> t;
  std::vector<double> value;
  std::vector<double> band_halfwidth;  // empty for plain lines
};

/// Static SVG line chart with optional shaded bands around series. Used for
/// reconstruction plots: mean line plus a +/- z*sigma band.
inline std::string render_svg_chart(const std::string& title,
                                    const std::vector<SvgSeries>& series,
                                    const std::string& x_label = "time (s)",
                                    const std::string& y_label = "cumulative vehicles") {
  const double width = 860, height = 460;
  const double ml = 64, mr = 20, mt = 40, mb = 48;
  double t_min = 1e300, t_max = -1e300, v_min = 1e300, v_max = -1e300;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.t.size(); ++i) {
      t_min = std::min(t_min, s.t[i]);
      t_max = std::max(t_max, s.t[i]);
      double half = i < s.band_halfwidth.size() ? s.band_halfwidth[i] : 0.0;
      v_min = std::min(v_min, s.value[i] - half);
      v_max = std::max(v_max, s.value[i] + half);
    }
  }
  if (t_min >= t_max) {
    t_min = 0;
    t_max = 1;
  }
  if (v_min >= v_max) {
    v_min = 0;
    v_max = 1;
  }
  auto sx = [&](double t) {
    return ml + (t - t_min) / (t_max - t_min) * (width - ml - mr);
  };
  auto sy = [&](double v) {
    return height - mb - (v - v_min) / (v_max - v_min) * (height - mt - mb);
  };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height
      << "\">\n";
  out << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";

  // axes with a handful of ticks
  out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\""
      << width - mr << "\" y2=\"" << height - mb
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << height - mb << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    double ft = t_min + (t_max - t_min) * i / 5.0;
    double fv = v_min + (v_max - v_min) * i / 5.0;
    out << "<text x=\"" << sx(ft) << "\" y=\"" << height - mb + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << format_fixed(ft, 0) << "</text>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << sy(fv) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << format_fixed(fv, 0) << "</text>\n";
  }
  out << "<text x=\"" << width / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << x_label << "</text>\n";
  out << "<text x=\"16\" y=\"" << height / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
      << "transform=\"rotate(-90 16 " << height / 2 << ")\">" << y_label
      << "</text>\n";

  for (const auto& s : series) {
    if (s.t.empty()) continue;
    if (!s.band_halfwidth.empty()) {
      out << "<polygon fill=\"" << s.color << "\" fill-opacity=\"0.2\" "
          << "stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < s.t.size(); ++i)
        out << format_fixed(sx(s.t[i]), 2) << ','
            << format_fixed(sy(s.value[i] + s.band_halfwidth[i]), 2) << ' ';
      for (std::size_t i = s.t.size(); i-- > 0;)
        out << format_fixed(sx(s.t[i]), 2) << ','
            << format_fixed(sy(s.value[i] - s.band_halfwidth[i]), 2) << ' ';
      out << "\"/>\n";
    }
    out << "<polyline fill=\"none\" stroke=\"" << s.color
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.t.size(); ++i)
      out << format_fixed(sx(s.t[i]), 2) << ',' << format_fixed(sy(s.value[i]), 2)
          << ' ';
    out << "\"/>\n";
  }

  double ly = mt + 4;
  for (const auto& s : series) {
    out << "<rect x=\"" << width - mr - 170 << "\" y=\"" << ly - 9
        << "\" width=\"12\" height=\"12\" fill=\"" << s.color << "\"/>\n";
    out << "<text x=\"" << width - mr - 152 << "\" y=\"" << ly + 2
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label
        << "</text>\n";
    ly += 18;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace acr
