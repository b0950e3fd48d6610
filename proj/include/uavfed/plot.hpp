#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "uavfed/env.hpp"
#include "uavfed/world.hpp"

namespace uavfed {

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (real-world episodes, collection ratio)
};

/// Collection ratio against real-world episodes, logarithmic x axis. Deterministic SVG text.
std::string collection_ratio_svg(const std::vector<PlotSeries>& series);

/// Top view: buildings shaded by height, devices as circles (anchors filled), estimated
/// positions of unknown devices as crosses, UAV paths coloured by the device being served.
std::string trajectory_svg(const CityMap& map, const std::vector<DeviceSpec>& devices,
                           const std::vector<TrajectoryStep>& trajectory,
                           const std::map<int, Vec3>& estimates = {});

}  // namespace uavfed
