#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace safe {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool dashed = false;
};

struct PlotSpec {
  std::string title;
  std::string x_label = "t";
  std::string y_label;
  std::vector<PlotSeries> series;
  std::vector<double> vertical_markers;  // e.g. true breakpoints
  std::vector<double> event_markers;     // e.g. detections
  int width = 960;
  int height = 360;
};

// Standalone SVG; long series are reduced to per-pixel min/max envelopes.
std::string render_svg(const PlotSpec& spec);
void write_svg(const PlotSpec& spec, const std::filesystem::path& path);

// Numeric CSV columns by header name; non-numeric cells become NaN.
std::map<std::string, std::vector<double>> read_csv_columns(const std::filesystem::path& path);

}  // namespace safe
