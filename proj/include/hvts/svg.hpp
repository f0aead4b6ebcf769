#pragma once

#include <string>
#include <vector>

#include "hvts/metrics.hpp"

namespace hvts::svg {

struct Series {
  std::string label;
  std::vector<double> xs;
  std::vector<double> ys;
};

// Minimal line plot: framed axes with five ticks per side, one polyline per
// series in a fixed palette, legend in the top-right corner.  Non-finite
// points break the polyline.  Axes are linear; callers wanting log scales
// pre-transform the data and say so in the labels.
std::string line_plot(const std::vector<Series>& series, const std::string& title,
                      const std::string& x_label, const std::string& y_label, int width = 800,
                      int height = 480);

// Error-matrix heatmap on a light-to-dark ramp, channels across, repetitions
// down, with a value-range legend.
std::string heatmap(const metrics::ErrorMatrix& m, const std::string& title, int cell = 14);

}  // namespace hvts::svg
