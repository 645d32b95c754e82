#pragma once

#include "cvgan/io.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace cvgan::report {

/// Minimal static SVG line chart; one polyline per labeled series.
inline std::string svg_line_plot(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                                 const std::string& title, int width = 720, int height = 360) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t max_len = 0;
  for (const auto& [label, ys] : series) {
    for (double y : ys) {
      if (!std::isfinite(y)) continue;
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
    max_len = std::max(max_len, ys.size());
  }
  if (!std::isfinite(lo) || max_len < 2) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi <= lo) hi = lo + 1.0;
  const double margin = 48.0;
  const double pw = width - 2 * margin, ph = height - 2 * margin;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">" << title << "</text>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
      << height - margin << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << margin - 6 << "\" y=\"" << margin << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
         "font-size=\"10\">" << hi << "</text>\n";
  out << "<text x=\"" << margin - 6 << "\" y=\"" << height - margin << "\" text-anchor=\"end\" "
         "font-family=\"sans-serif\" font-size=\"10\">" << lo << "</text>\n";
  int idx = 0;
  for (const auto& [label, ys] : series) {
    const char* color = palette[idx % 6];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (!std::isfinite(ys[i])) continue;
      const double x = margin + pw * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(1, max_len - 1));
      const double y = height - margin - ph * (ys[i] - lo) / (hi - lo);
      out << x << "," << y << " ";
    }
    out << "\"/>\n";
    out << "<text x=\"" << width - margin + 4 << "\" y=\"" << margin + 14 * (idx + 1)
        << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"" << color << "\">" << label << "</text>\n";
    ++idx;
  }
  out << "</svg>\n";
  return out.str();
}

/// Parse a simple TSV with a header row into (header, rows).
inline std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>> parse_tsv(
    const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream ss(text);
  std::string line;
  std::vector<std::string> header;
  bool first = true;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      cells.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (first) {
      header = cells;
      first = false;
    } else {
      rows.push_back(cells);
    }
  }
  return {header, rows};
}

}  // namespace cvgan::report
