#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "uavfed/env.hpp"
#include "uavfed/federation.hpp"
#include "uavfed/learner.hpp"

namespace uavfed {

/// Everything one experiment needs, loaded from a JSON file.
struct ExperimentConfig {
  std::filesystem::path map_path;
  ChannelParams channel;
  EnvConfig env;  // ground truth
  LearnerConfig learner;
  FedConfig federation;
  BaselineConfig baseline;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";

  /// Applies a seed to every consumer.
  void set_seed(std::uint64_t s);
};

/// Parses and validates a config. Relative paths resolve against `base_dir`. Unknown keys
/// and invariant violations raise ValidationError naming the field.
ExperimentConfig parse_experiment_config(const std::string& json_text, const std::filesystem::path& base_dir,
                                         const std::string& origin = "<string>");
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace uavfed
