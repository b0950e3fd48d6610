#include "uavfed/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>
#include <utility>

#include "json.hpp"
#include "uavfed/error.hpp"

namespace uavfed {

using nlohmann::json;

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

CityMap::CityMap(double cell_size_m, int width_cells, int height_cells,
                 std::vector<double> heights_m, Cell start_cell, Cell terminal_cell)
    : cell_size_m_(cell_size_m),
      width_(width_cells),
      height_(height_cells),
      heights_(std::move(heights_m)),
      start_(start_cell),
      terminal_(terminal_cell) {
  if (!(cell_size_m_ > 0.0) || !std::isfinite(cell_size_m_)) {
    throw ValidationError("cell_size_m: must be a positive finite number");
  }
  if (width_ <= 0 || height_ <= 0) {
    throw ValidationError("heights_m: map must have at least one row and one column");
  }
  if (heights_.size() != static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_)) {
    throw ValidationError("heights_m: expected " + std::to_string(width_ * height_) +
                          " values, found " + std::to_string(heights_.size()));
  }
  for (std::size_t i = 0; i < heights_.size(); ++i) {
    if (!(heights_[i] >= 0.0) || !std::isfinite(heights_[i])) {
      throw ValidationError("heights_m[" + std::to_string(i / width_) + "][" +
                            std::to_string(i % width_) + "]: height must be finite and >= 0");
    }
    max_height_ = std::max(max_height_, heights_[i]);
  }
  if (!in_bounds(start_)) throw ValidationError("start_cell: outside the grid");
  if (!in_bounds(terminal_)) throw ValidationError("terminal_cell: outside the grid");
}

double CityMap::diagonal_m() const { return std::hypot(extent_x_m(), extent_y_m()); }

Vec3 CityMap::center(const GridPos& p) const {
  return {(p.ix + 0.5) * cell_size_m_, (p.iy + 0.5) * cell_size_m_, p.altitude_m};
}

Cell CityMap::cell_at(double x_m, double y_m) const {
  int ix = static_cast<int>(std::floor(x_m / cell_size_m_));
  int iy = static_cast<int>(std::floor(y_m / cell_size_m_));
  return {std::clamp(ix, 0, width_ - 1), std::clamp(iy, 0, height_ - 1)};
}

// ---------------------------------------------------------------------------
// Map file I/O

namespace {

Cell parse_cell(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw ValidationError(field + ": expected [ix, iy] integer pair");
  }
  return {j[0].get<int>(), j[1].get<int>()};
}

json cell_json(Cell c) { return json::array({c.ix, c.iy}); }

MapDocument parse_map_document_impl(const std::string& json_text, const std::string& origin) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(origin + ": malformed JSON: " + e.what());
  }
  if (!root.is_object()) throw ValidationError(origin + ": top level must be an object");
  for (const char* key : {"cell_size_m", "heights_m", "start_cell", "terminal_cell"}) {
    if (!root.contains(key)) throw ValidationError(origin + ": missing key '" + key + "'");
  }
  if (!root["cell_size_m"].is_number()) throw ValidationError(origin + ": cell_size_m: not a number");

  const json& rows = root["heights_m"];
  if (!rows.is_array() || rows.empty()) throw ValidationError(origin + ": heights_m: expected non-empty 2D array");
  const int height = static_cast<int>(rows.size());
  int width = -1;
  std::vector<double> heights;
  for (int iy = 0; iy < height; ++iy) {
    const json& row = rows[iy];
    if (!row.is_array()) {
      throw ValidationError(origin + ": heights_m[" + std::to_string(iy) + "]: expected array");
    }
    if (width < 0) width = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != width) {
      throw ValidationError(origin + ": heights_m[" + std::to_string(iy) + "]: row length " +
                            std::to_string(row.size()) + " != width_cells " + std::to_string(width));
    }
    for (int ix = 0; ix < width; ++ix) {
      if (!row[ix].is_number()) {
        throw ValidationError(origin + ": heights_m[" + std::to_string(iy) + "][" +
                              std::to_string(ix) + "]: not a number");
      }
      heights.push_back(row[ix].get<double>());
    }
  }

  MapDocument doc{CityMap(root["cell_size_m"].get<double>(), width, height, std::move(heights),
                          parse_cell(root["start_cell"], origin + ": start_cell"),
                          parse_cell(root["terminal_cell"], origin + ": terminal_cell")),
                  {}};

  if (root.contains("devices")) {
    const json& devs = root["devices"];
    if (!devs.is_array()) throw ValidationError(origin + ": devices: expected array");
    for (std::size_t i = 0; i < devs.size(); ++i) {
      const std::string field = origin + ": devices[" + std::to_string(i) + "]";
      const json& d = devs[i];
      if (!d.is_object() || !d.contains("id") || !d.contains("cell") || !d.contains("data_init")) {
        throw ValidationError(field + ": expected object with id, cell, data_init");
      }
      DeviceSpec spec;
      spec.id = d["id"].get<int>();
      spec.cell = parse_cell(d["cell"], field + ".cell");
      spec.data_init = d["data_init"].get<double>();
      spec.anchor = d.value("anchor", false);
      if (!doc.map.in_bounds(spec.cell)) throw ValidationError(field + ".cell: outside the grid");
      if (!(spec.data_init >= 0.0)) throw ValidationError(field + ".data_init: must be >= 0");
      for (const auto& other : doc.devices) {
        if (other.id == spec.id) throw ValidationError(field + ".id: duplicate device id");
      }
      doc.devices.push_back(spec);
    }
  }
  return doc;
}

}  // namespace

MapDocument parse_map_document(const std::string& json_text, const std::string& origin) {
  try {
    return parse_map_document_impl(json_text, origin);
  } catch (const json::exception& e) {
    throw ValidationError(origin + ": " + e.what());
  }
}

MapDocument load_map_document(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path.string() + ": cannot open map file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_map_document(buf.str(), path.string());
}

CityMap load_map(const std::filesystem::path& path) { return load_map_document(path).map; }

std::string dump_map_document(const MapDocument& doc) {
  const CityMap& m = doc.map;
  // Rows are written one per line so maps stay diffable.
  std::ostringstream out;
  out << "{\n";
  out << "  \"cell_size_m\": " << json(m.cell_size_m()).dump() << ",\n";
  out << "  \"start_cell\": " << cell_json(m.start_cell()).dump() << ",\n";
  out << "  \"terminal_cell\": " << cell_json(m.terminal_cell()).dump() << ",\n";
  out << "  \"heights_m\": [\n";
  for (int iy = 0; iy < m.height_cells(); ++iy) {
    json row = json::array();
    for (int ix = 0; ix < m.width_cells(); ++ix) row.push_back(m.height_at({ix, iy}));
    out << "    " << row.dump() << (iy + 1 < m.height_cells() ? ",\n" : "\n");
  }
  out << "  ],\n";
  out << "  \"devices\": [\n";
  for (std::size_t i = 0; i < doc.devices.size(); ++i) {
    const DeviceSpec& d = doc.devices[i];
    json jd = {{"id", d.id}, {"cell", cell_json(d.cell)}, {"data_init", d.data_init}, {"anchor", d.anchor}};
    out << "    " << jd.dump() << (i + 1 < doc.devices.size() ? ",\n" : "\n");
  }
  out << "  ]\n}\n";
  return out.str();
}

void save_map_document(const std::filesystem::path& path, const MapDocument& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write map file");
  out << dump_map_document(doc);
}

// ---------------------------------------------------------------------------
// Line of sight

bool is_los_sampled(const CityMap& map, const GridPos& a, const GridPos& b, double step_m) {
  // Sample from the lexicographically smaller endpoint so the result is exactly symmetric.
  const GridPos& p = std::min(a, b);
  const GridPos& q = std::max(a, b);
  const Vec3 pa = map.center(p);
  const Vec3 pb = map.center(q);
  const double hmax = map.max_height();
  if (pa.z >= hmax && pb.z >= hmax) return true;

  const double len = distance(pa, pb);
  const long n = std::max(1L, static_cast<long>(std::ceil(len / step_m)));
  for (long i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n);
    const double z = pa.z + (pb.z - pa.z) * t;
    if (z >= hmax) continue;
    const Cell c = map.cell_at(pa.x + (pb.x - pa.x) * t, pa.y + (pb.y - pa.y) * t);
    if (map.height_at(c) > z) return false;
  }
  return true;
}

bool is_los(const CityMap& map, const GridPos& a, const GridPos& b) {
  return is_los_sampled(map, a, b, map.cell_size_m() / 10.0);
}

// ---------------------------------------------------------------------------
// Distance fields

bool flyable(const CityMap& map, Cell c, double altitude_m) {
  return map.in_bounds(c) && map.height_at(c) < altitude_m;
}

DistanceField distance_field(const CityMap& map, double altitude_m) {
  if (!(altitude_m > 0.0)) throw ValidationError("altitude_m: must be > 0");
  const Cell goal = map.terminal_cell();
  if (!flyable(map, goal, altitude_m)) {
    throw ValidationError("terminal_cell: blocked by a building at altitude " + std::to_string(altitude_m) + " m");
  }
  DistanceField field;
  field.altitude_m = altitude_m;
  field.width_cells = map.width_cells();
  field.height_cells = map.height_cells();
  field.steps_to_terminal.assign(map.cell_count(), DistanceField::kUnreachable);

  std::queue<Cell> frontier;
  field.steps_to_terminal[map.index(goal)] = 0;
  frontier.push(goal);
  constexpr int kDx[4] = {0, -1, 0, 1};
  constexpr int kDy[4] = {1, 0, -1, 0};
  while (!frontier.empty()) {
    const Cell c = frontier.front();
    frontier.pop();
    const int next = field.steps_to_terminal[map.index(c)] + 1;
    for (int k = 0; k < 4; ++k) {
      const Cell n{c.ix + kDx[k], c.iy + kDy[k]};
      if (!flyable(map, n, altitude_m)) continue;
      int& slot = field.steps_to_terminal[map.index(n)];
      if (slot != DistanceField::kUnreachable) continue;
      slot = next;
      frontier.push(n);
    }
  }
  return field;
}

}  // namespace uavfed
