#pragma once

// Small scenario builders shared by the unit and acceptance suites.

#include <filesystem>
#include <memory>
#include <vector>

#include "uavfed/channel.hpp"
#include "uavfed/env.hpp"
#include "uavfed/world.hpp"

namespace uavfed::testing {

inline std::filesystem::path source_root() { return UAVFED_SOURCE_DIR; }
inline std::filesystem::path config_dir() { return source_root() / "configs"; }

inline CityMap open_map(int w, int h, double cell = 10.0, Cell start = {0, 0}, Cell terminal = {0, 0}) {
  return CityMap(cell, w, h, std::vector<double>(static_cast<std::size_t>(w) * h, 0.0), start, terminal);
}

inline CityMap map_with_heights(int w, int h, std::vector<double> heights, double cell = 10.0,
                                Cell start = {0, 0}, Cell terminal = {0, 0}) {
  return CityMap(cell, w, h, std::move(heights), start, terminal);
}

inline ChannelParams noiseless(ChannelParams p = {}) {
  p.sigma_los = 0.0;
  p.sigma_nlos = 0.0;
  return p;
}

inline EnvConfig make_env_config(CityMap map, std::vector<DeviceSpec> devices, std::vector<UavSpec> uavs,
                                 ChannelParams channel = {}) {
  EnvConfig cfg;
  cfg.map = std::make_shared<const CityMap>(std::move(map));
  cfg.devices = std::move(devices);
  cfg.uavs = std::move(uavs);
  cfg.channel = std::make_shared<const GroundTruthChannel>(channel);
  return cfg;
}

}  // namespace uavfed::testing

namespace uavfed::testing {

/// Ground-truth RBM scenario: 3 UAVs at 55/60/65 m with 60 battery units.
inline EnvConfig rbm_env_config(ChannelParams channel = {}, double slot_duration = 200.0) {
  MapDocument doc = load_map_document(config_dir() / "rbm_map.json");
  EnvConfig cfg = make_env_config(doc.map, doc.devices,
                                  {{0, 55.0, 60.0}, {1, 60.0, 60.0}, {2, 65.0, 60.0}}, channel);
  cfg.slot_duration = slot_duration;
  return cfg;
}

}  // namespace uavfed::testing

namespace uavfed::testing {

/// Desk-scale scenario: 20x20 cells, 4 devices (2 anchors), 2 UAVs at 55/60 m.
inline EnvConfig desk_env_config(double battery = 25.0, ChannelParams channel = {}) {
  MapDocument doc = load_map_document(config_dir() / "desk_map.json");
  return make_env_config(doc.map, doc.devices, {{0, 55.0, battery}, {1, 60.0, battery}}, channel);
}

}  // namespace uavfed::testing
