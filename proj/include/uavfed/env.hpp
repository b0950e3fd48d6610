#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uavfed/channel.hpp"
#include "uavfed/world.hpp"

namespace uavfed {

/// Discrete UAV actions, in the order used by feasibility masks and Q-value heads.
enum class Action : int { Hover = 0, North = 1, West = 2, South = 3, East = 4, NoOp = 5 };
inline constexpr int kNumActions = 6;
using ActionMask = std::array<bool, kNumActions>;

inline Action action_from_index(int i) { return static_cast<Action>(i); }
inline int action_index(Action a) { return static_cast<int>(a); }
const char* action_name(Action a);

/// Cell reached by one action (north is +iy).
Cell displaced(Cell c, Action a);
/// Battery drawn by one action: 1 per move, 0.5 for hover, 0 for no-op.
double energy_cost(Action a);

struct UavSpec {
  int id = 0;
  double altitude_m = 0.0;
  double battery_init = 0.0;
};

struct EnvConfig {
  std::shared_ptr<const CityMap> map;
  std::vector<DeviceSpec> devices;
  std::vector<UavSpec> uavs;
  std::shared_ptr<const LinkModel> channel;
  double slot_duration = 1.0;
  /// Log a measurement for every UAV-device pair, not only reachable ones.
  bool log_all_pairs = false;
  /// Device cells reported in observations and global state. Empty means the true cells.
  /// Physics (links, collection) always uses DeviceSpec::cell.
  std::vector<Cell> believed_device_cells;
};

struct UavState {
  GridPos pos;
  double battery = 0.0;
  bool done = false;
};

struct EnvState {
  int t = 0;
  std::vector<UavState> uavs;
  std::vector<double> data_remaining;
};

struct MeasurementRecord {
  int uav_id = 0;
  int t = 0;
  GridPos uav_pos;
  int device_id = 0;
  double gain_db = 0.0;
};

/// Link realizations for one time step. UAV-UAV links are symmetric.
struct LinkTable {
  int n_uavs = 0;
  int n_devices = 0;
  std::vector<LinkSample> uav_device;  // [i * n_devices + k]
  std::vector<LinkSample> uav_uav;     // [i * n_uavs + j]

  const LinkSample& device_link(int i, int k) const { return uav_device[i * n_devices + k]; }
  const LinkSample& peer_link(int i, int j) const { return uav_uav[i * n_uavs + j]; }
};

/// Per-UAV assigned device index, -1 when idle.
using Assignment = std::vector<int>;

/// Global max-SNR greedy matching: candidate (uav, device) pairs with a reachable link,
/// data left and a live UAV are taken in descending SNR order (ties by ascending uav then
/// device index) whenever both ends are still free.
Assignment schedule(const EnvState& state, const LinkTable& links, double snr_threshold);

struct StepOutcome {
  std::vector<std::vector<double>> observations;
  std::vector<double> global_state;
  double reward = 0.0;
  Assignment schedule;
  std::vector<double> throughputs;  // per UAV, 0 when idle
  std::vector<MeasurementRecord> measurements;
  bool episode_done = false;
};

/// Multi-UAV data-harvesting Dec-POMDP. Single-threaded; give each thread its own instance.
class Env {
 public:
  explicit Env(EnvConfig config);

  /// Returns observations and global state of t = 0. No data is collected on reset.
  StepOutcome reset(Rng& rng);
  StepOutcome step(std::span<const Action> joint_action, Rng& rng);

  ActionMask feasible_mask(int uav) const;
  std::vector<Action> feasible_actions(int uav) const;

  std::vector<double> observation(int uav) const;
  std::vector<double> global_state() const;

  const EnvState& state() const { return state_; }
  const EnvConfig& config() const { return config_; }
  const CityMap& map() const { return *config_.map; }
  const LinkTable& links() const { return links_; }
  const Assignment& current_schedule() const { return schedule_; }

  int n_agents() const { return static_cast<int>(config_.uavs.size()); }
  int n_devices() const { return static_cast<int>(config_.devices.size()); }
  int obs_dim() const { return kNumActions + 7 * n_devices() + 6 * (n_agents() - 1) + 2; }
  int state_dim() const { return 5 * n_agents() + 3 * n_devices(); }
  bool episode_done() const { return episode_done_; }

  /// Minimum battery needed to reach the terminal from the UAV's current cell.
  int steps_to_terminal(int uav) const;
  const DistanceField& distance_field_of(int uav) const { return *fields_[uav]; }

  double total_initial_data() const { return total_initial_data_; }
  double collected() const { return collected_; }

 private:
  void sample_links(Rng& rng, std::vector<MeasurementRecord>& log);
  bool device_los(int uav, int device);
  std::vector<double> build_observation(int uav) const;
  StepOutcome make_outcome(double reward, std::vector<double> throughputs,
                           std::vector<MeasurementRecord> measurements);
  Vec3 believed_device_center(int k) const;

  EnvConfig config_;
  std::vector<std::shared_ptr<const DistanceField>> fields_;
  // Lazily filled LoS flags per (uav, cell, device): -1 unknown, 0 NLoS, 1 LoS.
  std::vector<std::vector<signed char>> los_cache_;
  EnvState state_;
  LinkTable links_;
  Assignment schedule_;
  std::vector<std::optional<std::vector<double>>> frozen_obs_;
  double total_initial_data_ = 0.0;
  double collected_ = 0.0;
  bool episode_done_ = true;
};

/// Uniform draw among feasible actions.
Action random_feasible_action(const ActionMask& mask, Rng& rng);

// ---------------------------------------------------------------------------
// Trajectory and measurement export

struct TrajectoryStep {
  int t = 0;
  std::vector<int> uav_ids;
  std::vector<Cell> cells;
  std::vector<double> batteries;
  std::vector<int> assigned_device;  // device id, -1 when idle
  double reward = 0.0;
};

/// Snapshot of the env after reset/step, labelled with the outcome's schedule and reward.
TrajectoryStep snapshot(const Env& env, const StepOutcome& outcome);

std::string trajectory_to_json(const std::vector<TrajectoryStep>& steps);
std::vector<TrajectoryStep> trajectory_from_json(const std::string& text);

void write_measurements_csv(const std::filesystem::path& path,
                            const std::vector<MeasurementRecord>& records);
std::vector<MeasurementRecord> read_measurements_csv(const std::filesystem::path& path);

}  // namespace uavfed
