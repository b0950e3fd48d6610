#pragma once

#include <compare>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace uavfed {

struct Cell {
  int ix = 0;
  int iy = 0;
  auto operator<=>(const Cell&) const = default;
};

/// A position on the grid. UAVs fly at altitude_m > 0, ground devices sit at 0.
struct GridPos {
  int ix = 0;
  int iy = 0;
  double altitude_m = 0.0;

  Cell cell() const { return {ix, iy}; }
  auto operator<=>(const GridPos&) const = default;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

double distance(const Vec3& a, const Vec3& b);

struct DeviceSpec {
  int id = 0;
  Cell cell;
  double data_init = 0.0;
  bool anchor = false;
};

/// Raster height map of the city. Heights are stored row-major with one row per iy.
class CityMap {
 public:
  CityMap(double cell_size_m, int width_cells, int height_cells, std::vector<double> heights_m,
          Cell start_cell, Cell terminal_cell);

  double cell_size_m() const { return cell_size_m_; }
  int width_cells() const { return width_; }
  int height_cells() const { return height_; }
  Cell start_cell() const { return start_; }
  Cell terminal_cell() const { return terminal_; }
  const std::vector<double>& heights() const { return heights_; }

  bool in_bounds(Cell c) const { return c.ix >= 0 && c.iy >= 0 && c.ix < width_ && c.iy < height_; }
  double height_at(Cell c) const { return heights_[index(c)]; }
  double max_height() const { return max_height_; }
  std::size_t index(Cell c) const {
    return static_cast<std::size_t>(c.iy) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(c.ix);
  }
  std::size_t cell_count() const { return heights_.size(); }

  double extent_x_m() const { return width_ * cell_size_m_; }
  double extent_y_m() const { return height_ * cell_size_m_; }
  double diagonal_m() const;

  /// Metric center of a cell, at the given altitude.
  Vec3 center(const GridPos& p) const;
  /// Cell containing the metric point (x, y); clamped to the grid.
  Cell cell_at(double x_m, double y_m) const;

  bool operator==(const CityMap&) const = default;

 private:
  double cell_size_m_;
  int width_;
  int height_;
  std::vector<double> heights_;
  Cell start_;
  Cell terminal_;
  double max_height_ = 0.0;
};

/// A map file: the city raster plus the ground devices declared alongside it.
struct MapDocument {
  CityMap map;
  std::vector<DeviceSpec> devices;
};

MapDocument load_map_document(const std::filesystem::path& path);
CityMap load_map(const std::filesystem::path& path);
MapDocument parse_map_document(const std::string& json_text, const std::string& origin = "<string>");
std::string dump_map_document(const MapDocument& doc);
void save_map_document(const std::filesystem::path& path, const MapDocument& doc);

/// True iff the straight segment between the two cell centers clears every building.
/// The segment is sampled every cell_size_m / 10 of arclength; a sample is blocked when the
/// building under it is strictly taller than the segment at that point.
bool is_los(const CityMap& map, const GridPos& a, const GridPos& b);

/// Variant with an explicit sampling step, used as a dense reference in tests.
bool is_los_sampled(const CityMap& map, const GridPos& a, const GridPos& b, double step_m);

/// BFS step counts to the terminal cell for a UAV flying at one altitude.
struct DistanceField {
  static constexpr int kUnreachable = std::numeric_limits<int>::max();

  double altitude_m = 0.0;
  int width_cells = 0;
  int height_cells = 0;
  std::vector<int> steps_to_terminal;

  int at(Cell c) const {
    return steps_to_terminal[static_cast<std::size_t>(c.iy) * width_cells + c.ix];
  }
  bool reachable(Cell c) const { return at(c) != kUnreachable; }
};

/// Cells whose building height is at or above the altitude are no-fly.
bool flyable(const CityMap& map, Cell c, double altitude_m);

DistanceField distance_field(const CityMap& map, double altitude_m);

}  // namespace uavfed
