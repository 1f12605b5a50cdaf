#include "safe/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "safe/errors.hpp"
#include "text.hpp"

namespace safe {

namespace {

constexpr double kMarginLeft = 70, kMarginRight = 150, kMarginTop = 36, kMarginBottom = 44;

std::string escape(const std::string& s) {
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!(lo <= hi)) lo = 0.0, hi = 1.0;
    if (lo == hi) lo -= 0.5, hi += 0.5;
  }
};

// Keeps the first, min, max and last point of every pixel column.
std::vector<std::pair<double, double>> envelope(const PlotSeries& s, double x0, double x1, int columns) {
  std::vector<std::pair<double, double>> pts;
  const std::size_t n = std::min(s.x.size(), s.y.size());
  if (n <= static_cast<std::size_t>(columns) * 4) {
    for (std::size_t i = 0; i < n; ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts.emplace_back(s.x[i], s.y[i]);
    return pts;
  }
  const double width = (x1 - x0) / columns;
  std::size_t i = 0;
  while (i < n) {
    const int col = static_cast<int>(std::floor((s.x[i] - x0) / width));
    std::size_t j = i, lo = i, hi = i;
    while (j < n && static_cast<int>(std::floor((s.x[j] - x0) / width)) == col) {
      if (s.y[j] < s.y[lo]) lo = j;
      if (s.y[j] > s.y[hi]) hi = j;
      ++j;
    }
    std::vector<std::size_t> keep{i, lo, hi, j - 1};
    std::sort(keep.begin(), keep.end());
    keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
    for (std::size_t k : keep)
      if (std::isfinite(s.y[k])) pts.emplace_back(s.x[k], s.y[k]);
    i = j;
  }
  return pts;
}

}  // namespace

std::string render_svg(const PlotSpec& spec) {
  const double w = spec.width, h = spec.height;
  const double pw = w - kMarginLeft - kMarginRight, ph = h - kMarginTop - kMarginBottom;
  Range xr, yr;
  for (const auto& s : spec.series) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  xr.finish();
  yr.finish();
  const double pad = 0.04 * (yr.hi - yr.lo);
  yr.lo -= pad;
  yr.hi += pad;
  auto px = [&](double x) { return kMarginLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) { return kMarginTop + (1.0 - (y - yr.lo) / (yr.hi - yr.lo)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
    << "\" viewBox=\"0 0 " << spec.width << ' ' << spec.height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(w / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(spec.title)
    << "</text>\n";
  o << "<rect x=\"" << num(kMarginLeft) << "\" y=\"" << num(kMarginTop) << "\" width=\"" << num(pw)
    << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"#444\"/>\n";

  for (int k = 0; k <= 4; ++k) {
    const double yv = yr.lo + (yr.hi - yr.lo) * k / 4.0;
    const double xv = xr.lo + (xr.hi - xr.lo) * k / 4.0;
    o << "<line x1=\"" << num(kMarginLeft) << "\" x2=\"" << num(kMarginLeft + pw) << "\" y1=\"" << num(py(yv))
      << "\" y2=\"" << num(py(yv)) << "\" stroke=\"#eee\"/>\n";
    o << "<text x=\"" << num(kMarginLeft - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">"
      << tick_label(yv) << "</text>\n";
    o << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(kMarginTop + ph + 16) << "\" text-anchor=\"middle\">"
      << tick_label(xv) << "</text>\n";
  }
  o << "<text x=\"" << num(kMarginLeft + pw / 2) << "\" y=\"" << num(h - 8) << "\" text-anchor=\"middle\">"
    << escape(spec.x_label) << "</text>\n";
  o << "<text transform=\"translate(16 " << num(kMarginTop + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(spec.y_label) << "</text>\n";

  for (double m : spec.vertical_markers)
    o << "<line x1=\"" << num(px(m)) << "\" x2=\"" << num(px(m)) << "\" y1=\"" << num(kMarginTop) << "\" y2=\""
      << num(kMarginTop + ph) << "\" stroke=\"#2ca02c\" stroke-width=\"1.5\"/>\n";
  for (double m : spec.event_markers)
    o << "<line x1=\"" << num(px(m)) << "\" x2=\"" << num(px(m)) << "\" y1=\"" << num(kMarginTop + ph - 10)
      << "\" y2=\"" << num(kMarginTop + ph) << "\" stroke=\"#d62728\"/>\n";

  for (const auto& s : spec.series) {
    const auto pts = envelope(s, xr.lo, xr.hi, static_cast<int>(pw));
    if (pts.empty()) continue;
    o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1\"";
    if (s.dashed) o << " stroke-dasharray=\"4 3\"";
    o << " points=\"";
    for (const auto& [x, y] : pts) o << num(px(x)) << ',' << num(py(y)) << ' ';
    o << "\"/>\n";
  }

  double ly = kMarginTop + 10;
  for (const auto& s : spec.series) {
    const double lx = kMarginLeft + pw + 12;
    o << "<line x1=\"" << num(lx) << "\" x2=\"" << num(lx + 18) << "\" y1=\"" << num(ly) << "\" y2=\"" << num(ly)
      << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << num(lx + 24) << "\" y=\"" << num(ly + 4) << "\">" << escape(s.label) << "</text>\n";
    ly += 16;
  }
  o << "</svg>\n";
  return o.str();
}

void write_svg(const PlotSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << render_svg(spec);
  if (!out) throw DataError("failed writing " + path.string());
}

std::map<std::string, std::vector<double>> read_csv_columns(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  std::vector<std::string> names;
  for (auto cell : text::split(line, ',')) names.emplace_back(text::trim(cell));
  std::map<std::string, std::vector<double>> cols;
  for (const auto& n : names) cols[n];
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(line, ',');
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto v = i < cells.size() ? text::parse_double(text::trim(cells[i])) : std::nullopt;
      cols[names[i]].push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
    }
  }
  return cols;
}

}  // namespace safe
