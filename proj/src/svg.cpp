#include "hvts/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace hvts::svg {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string text_at(double x, double y, const std::string& s, const std::string& attrs) {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" " + attrs +
         " font-family=\"sans-serif\">" + escape(s) + "</text>\n";
}

}  // namespace

std::string line_plot(const std::vector<Series>& series, const std::string& title,
                      const std::string& x_label, const std::string& y_label, int width,
                      int height) {
  const double ml = 70, mr = 20, mt = 36, mb = 52;  // margins
  const double pw = width - ml - mr, ph = height - mt - mb;

  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_min = x_min, y_max = -x_min;
  for (const Series& s : series) {
    for (std::size_t i = 0; i < s.xs.size() && i < s.ys.size(); ++i) {
      if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
      x_min = std::min(x_min, s.xs[i]);
      x_max = std::max(x_max, s.xs[i]);
      y_min = std::min(y_min, s.ys[i]);
      y_max = std::max(y_max, s.ys[i]);
    }
  }
  if (!(x_min <= x_max)) {  // no finite points at all
    x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  }
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1;

  auto px = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * pw; };
  auto py = [&](double y) { return mt + ph - (y - y_min) / (y_max - y_min) * ph; };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(width) + "\" height=\"" + std::to_string(height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<rect x=\"" + num(ml) + "\" y=\"" + num(mt) + "\" width=\"" + num(pw) +
         "\" height=\"" + num(ph) + "\" fill=\"none\" stroke=\"#333\"/>\n";
  out += text_at(width / 2.0, 22, title, "text-anchor=\"middle\" font-size=\"15\"");
  out += text_at(ml + pw / 2.0, height - 12, x_label, "text-anchor=\"middle\" font-size=\"12\"");
  out += "<g transform=\"translate(16," + num(mt + ph / 2.0) + ") rotate(-90)\">" +
         text_at(0, 0, y_label, "text-anchor=\"middle\" font-size=\"12\"") + "</g>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fx = x_min + (x_max - x_min) * i / 4.0;
    const double fy = y_min + (y_max - y_min) * i / 4.0;
    out += "<line x1=\"" + num(px(fx)) + "\" y1=\"" + num(mt + ph) + "\" x2=\"" + num(px(fx)) +
           "\" y2=\"" + num(mt + ph + 5) + "\" stroke=\"#333\"/>\n";
    out += text_at(px(fx), mt + ph + 18, num(fx), "text-anchor=\"middle\" font-size=\"10\"");
    out += "<line x1=\"" + num(ml - 5) + "\" y1=\"" + num(py(fy)) + "\" x2=\"" + num(ml) +
           "\" y2=\"" + num(py(fy)) + "\" stroke=\"#333\"/>\n";
    out += text_at(ml - 8, py(fy) + 3, num(fy), "text-anchor=\"end\" font-size=\"10\"");
  }

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % kPaletteSize];
    std::string points;
    bool open = false;
    auto flush = [&]() {
      if (open && !points.empty()) {
        out += "<polyline points=\"" + points + "\" fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"1.5\"/>\n";
      }
      points.clear();
      open = false;
    };
    for (std::size_t i = 0; i < series[s].xs.size() && i < series[s].ys.size(); ++i) {
      const double x = series[s].xs[i], y = series[s].ys[i];
      if (!std::isfinite(x) || !std::isfinite(y)) {
        flush();
        continue;
      }
      points += num(px(x)) + "," + num(py(y)) + " ";
      open = true;
    }
    flush();
    if (!series[s].label.empty()) {
      const double ly = mt + 16 + 16 * static_cast<double>(s);
      out += "<line x1=\"" + num(ml + pw - 120) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" +
             num(ml + pw - 100) + "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + color +
             "\" stroke-width=\"2\"/>\n";
      out += text_at(ml + pw - 94, ly, series[s].label, "font-size=\"11\"");
    }
  }
  out += "</svg>\n";
  return out;
}

std::string heatmap(const metrics::ErrorMatrix& m, const std::string& title, int cell) {
  const double ml = 54, mt = 40, legend = 26;
  const int width = static_cast<int>(ml) + m.cols * cell + 20;
  const int height = static_cast<int>(mt) + m.rows * cell + static_cast<int>(legend) + 16;

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : m.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(lo <= hi)) lo = 0, hi = 1;
  if (hi == lo) hi = lo + 1;

  auto shade = [&](double v) {
    const double f = (v - lo) / (hi - lo);
    // light #f2f7fc to dark #08306b
    const int r = static_cast<int>(std::lround(242 + f * (8 - 242)));
    const int g = static_cast<int>(std::lround(247 + f * (48 - 247)));
    const int b = static_cast<int>(std::lround(252 + f * (107 - 252)));
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return std::string(buf);
  };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(width) + "\" height=\"" + std::to_string(height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += text_at(width / 2.0, 20, title, "text-anchor=\"middle\" font-size=\"14\"");
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      out += "<rect x=\"" + num(ml + c * cell) + "\" y=\"" + num(mt + r * cell) + "\" width=\"" +
             std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" +
             shade(m.at(r, c)) + "\"/>\n";
    }
  }
  for (int c = 0; c < m.cols; ++c) {
    if (m.cols > 12 && c % 2 == 1) continue;
    out += text_at(ml + c * cell + cell / 2.0, mt - 4,
                   c < static_cast<int>(m.col_labels.size()) ? m.col_labels[c] : "",
                   "text-anchor=\"middle\" font-size=\"8\"");
  }
  for (int r = 0; r < m.rows; ++r) {
    if (m.rows > 20 && r % 5 != 0) continue;
    out += text_at(ml - 4, mt + r * cell + cell * 0.75,
                   r < static_cast<int>(m.row_labels.size()) ? m.row_labels[r] : "",
                   "text-anchor=\"end\" font-size=\"8\"");
  }
  const double ly = mt + m.rows * cell + 14;
  out += text_at(ml, ly + 9, num(lo), "text-anchor=\"start\" font-size=\"10\"");
  for (int i = 0; i < 60; ++i) {
    out += "<rect x=\"" + num(ml + 40 + i * 2) + "\" y=\"" + num(ly) +
           "\" width=\"2\" height=\"12\" fill=\"" + shade(lo + (hi - lo) * i / 59.0) + "\"/>\n";
  }
  out += text_at(ml + 40 + 126, ly + 9, num(hi), "text-anchor=\"start\" font-size=\"10\"");
  out += "</svg>\n";
  return out;
}

}  // namespace hvts::svg
