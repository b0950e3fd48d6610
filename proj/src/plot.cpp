#include "uavfed/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace uavfed {

namespace {

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"};
constexpr int kPaletteSize = 10;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string collection_ratio_svg(const std::vector<PlotSeries>& series) {
  const double W = 640, H = 420, left = 70, right = 160, top = 30, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  double xmax = 10.0;
  for (const auto& s : series) {
    for (const auto& p : s.points) xmax = std::max(xmax, p.first);
  }
  const int decades = std::max(1, static_cast<int>(std::ceil(std::log10(xmax) - 1e-12)));
  auto sx = [&](double x) { return left + pw * std::log10(std::max(x, 1.0)) / decades; };
  auto sy = [&](double y) { return top + ph * (1.0 - std::clamp(y, 0.0, 1.0)); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  for (int d = 0; d <= decades; ++d) {
    const double x = sx(std::pow(10.0, d));
    o << "<line x1=\"" << num(x) << "\" y1=\"" << num(top) << "\" x2=\"" << num(x) << "\" y2=\"" << num(top + ph)
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << num(x) << "\" y=\"" << num(top + ph + 18) << "\" text-anchor=\"middle\">10^" << d
      << "</text>\n";
  }
  for (int k = 0; k <= 5; ++k) {
    const double y = sy(k / 5.0);
    o << "<line x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\"" << num(left + pw) << "\" y2=\"" << num(y)
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << num(left - 8) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << num(k / 5.0)
      << "</text>\n";
  }
  o << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(H - 15)
    << "\" text-anchor=\"middle\">real-world episodes (log scale)</text>\n";
  o << "<text transform=\"translate(18," << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << "collection ratio</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* colour = kPalette[s % kPaletteSize];
    o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].points.size(); ++i) {
      const auto& p = series[s].points[i];
      o << (i ? " " : "") << num(sx(p.first)) << ',' << num(sy(p.second));
    }
    o << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(s);
    o << "<line x1=\"" << num(left + pw + 12) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(left + pw + 32)
      << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << num(left + pw + 38) << "\" y=\"" << num(ly) << "\">" << escape(series[s].label)
      << "</text>\n";
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

std::string trajectory_svg(const CityMap& map, const std::vector<DeviceSpec>& devices,
                           const std::vector<TrajectoryStep>& trajectory, const std::map<int, Vec3>& estimates) {
  const double cs = std::max(4.0, std::min(24.0, 600.0 / std::max(map.width_cells(), map.height_cells())));
  const double W = cs * map.width_cells(), H = cs * map.height_cells();
  // North (+iy) is up.
  auto px = [&](double x_m) { return x_m / map.cell_size_m() * cs; };
  auto py = [&](double y_m) { return H - y_m / map.cell_size_m() * cs; };
  auto cx = [&](int ix) { return (ix + 0.5) * cs; };
  auto cy = [&](int iy) { return H - (iy + 0.5) * cs; };

  auto colour_of = [&](int device_id) -> const char* {
    for (std::size_t k = 0; k < devices.size(); ++k) {
      if (devices[k].id == device_id) return kPalette[k % kPaletteSize];
    }
    return "#444";
  };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(W) << "\" height=\"" << num(H)
    << "\" viewBox=\"0 0 " << num(W) << ' ' << num(H) << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double hmax = std::max(1.0, map.max_height());
  for (int iy = 0; iy < map.height_cells(); ++iy) {
    for (int ix = 0; ix < map.width_cells(); ++ix) {
      const double h = map.height_at({ix, iy});
      if (h <= 0.0) continue;
      const int shade = 200 - static_cast<int>(120.0 * h / hmax);
      o << "<rect x=\"" << num(ix * cs) << "\" y=\"" << num(H - (iy + 1) * cs) << "\" width=\"" << num(cs)
        << "\" height=\"" << num(cs) << "\" fill=\"rgb(" << shade << ',' << shade << ',' << shade << ")\"/>\n";
    }
  }
  const Cell term = map.terminal_cell();
  o << "<rect x=\"" << num(term.ix * cs + 1) << "\" y=\"" << num(H - (term.iy + 1) * cs + 1) << "\" width=\""
    << num(cs - 2) << "\" height=\"" << num(cs - 2) << "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";

  // Paths: one segment per step, coloured by the device served at the end of the step.
  for (std::size_t t = 1; t < trajectory.size(); ++t) {
    const TrajectoryStep& a = trajectory[t - 1];
    const TrajectoryStep& b = trajectory[t];
    for (std::size_t i = 0; i < b.cells.size() && i < a.cells.size(); ++i) {
      const int dev = b.assigned_device[i];
      const char* colour = dev < 0 ? "#444" : colour_of(dev);
      const double off = (static_cast<double>(i) - 0.5 * (b.cells.size() - 1)) * cs * 0.12;
      if (a.cells[i] == b.cells[i]) {
        if (dev >= 0) {
          o << "<circle cx=\"" << num(cx(b.cells[i].ix) + off) << "\" cy=\"" << num(cy(b.cells[i].iy) + off)
            << "\" r=\"" << num(cs * 0.15) << "\" fill=\"" << colour << "\"/>\n";
        }
        continue;
      }
      o << "<line x1=\"" << num(cx(a.cells[i].ix) + off) << "\" y1=\"" << num(cy(a.cells[i].iy) + off)
        << "\" x2=\"" << num(cx(b.cells[i].ix) + off) << "\" y2=\"" << num(cy(b.cells[i].iy) + off)
        << "\" stroke=\"" << colour << "\" stroke-width=\"" << num(cs * 0.12) << "\" stroke-linecap=\"round\"/>\n";
    }
  }

  for (const DeviceSpec& d : devices) {
    o << "<circle cx=\"" << num(cx(d.cell.ix)) << "\" cy=\"" << num(cy(d.cell.iy)) << "\" r=\"" << num(cs * 0.35)
      << "\" stroke=\"black\" fill=\"" << (d.anchor ? colour_of(d.id) : "white") << "\"/>\n";
    if (!d.anchor) {
      o << "<circle cx=\"" << num(cx(d.cell.ix)) << "\" cy=\"" << num(cy(d.cell.iy)) << "\" r=\"" << num(cs * 0.2)
        << "\" fill=\"" << colour_of(d.id) << "\"/>\n";
    }
  }
  for (const auto& [id, p] : estimates) {
    const double x = px(p.x), y = py(p.y), r = cs * 0.35;
    o << "<path d=\"M" << num(x - r) << ',' << num(y - r) << " L" << num(x + r) << ',' << num(y + r) << " M"
      << num(x - r) << ',' << num(y + r) << " L" << num(x + r) << ',' << num(y - r) << "\" stroke=\"red\" stroke-width=\""
      << num(cs * 0.12) << "\"/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace uavfed
