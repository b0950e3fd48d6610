#include "uavfed/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <utility>

#include "json.hpp"
#include "uavfed/error.hpp"

namespace uavfed {

const char* action_name(Action a) {
  switch (a) {
    case Action::Hover: return "hover";
    case Action::North: return "north";
    case Action::West: return "west";
    case Action::South: return "south";
    case Action::East: return "east";
    case Action::NoOp: return "noop";
  }
  return "?";
}

Cell displaced(Cell c, Action a) {
  switch (a) {
    case Action::North: return {c.ix, c.iy + 1};
    case Action::West: return {c.ix - 1, c.iy};
    case Action::South: return {c.ix, c.iy - 1};
    case Action::East: return {c.ix + 1, c.iy};
    case Action::Hover:
    case Action::NoOp: break;
  }
  return c;
}

double energy_cost(Action a) {
  switch (a) {
    case Action::NoOp: return 0.0;
    case Action::Hover: return 0.5;
    default: return 1.0;
  }
}

// ---------------------------------------------------------------------------

Assignment schedule(const EnvState& state, const LinkTable& links, double snr_threshold) {
  struct Candidate {
    double snr;
    int uav;
    int device;
  };
  std::vector<Candidate> candidates;
  for (int i = 0; i < links.n_uavs; ++i) {
    if (state.uavs[i].done) continue;
    for (int k = 0; k < links.n_devices; ++k) {
      const LinkSample& link = links.device_link(i, k);
      if (!reachable(link, snr_threshold) || !(state.data_remaining[k] > 0.0)) continue;
      candidates.push_back({link.snr, i, k});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.snr != b.snr) return a.snr > b.snr;
    return std::tie(a.uav, a.device) < std::tie(b.uav, b.device);
  });
  Assignment out(links.n_uavs, -1);
  std::vector<bool> device_taken(links.n_devices, false);
  for (const Candidate& c : candidates) {
    if (out[c.uav] >= 0 || device_taken[c.device]) continue;
    out[c.uav] = c.device;
    device_taken[c.device] = true;
  }
  return out;
}

// ---------------------------------------------------------------------------

Env::Env(EnvConfig config) : config_(std::move(config)) {
  if (!config_.map) throw ValidationError("env.map: missing");
  if (!config_.channel) throw ValidationError("env.channel: missing");
  if (config_.uavs.empty()) throw ValidationError("uavs: at least one UAV is required");
  if (!(config_.slot_duration > 0.0)) throw ValidationError("env.slot_duration: must be > 0");
  const CityMap& m = *config_.map;

  if (!config_.believed_device_cells.empty() &&
      config_.believed_device_cells.size() != config_.devices.size()) {
    throw ValidationError("env.believed_device_cells: size must match devices");
  }
  // Keep believed cells paired with their device while sorting by id.
  std::vector<std::size_t> order(config_.devices.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return config_.devices[a].id < config_.devices[b].id;
  });
  std::vector<DeviceSpec> devices;
  std::vector<Cell> believed;
  for (std::size_t idx : order) {
    devices.push_back(config_.devices[idx]);
    if (!config_.believed_device_cells.empty()) believed.push_back(config_.believed_device_cells[idx]);
  }
  config_.devices = std::move(devices);
  config_.believed_device_cells = std::move(believed);
  std::stable_sort(config_.uavs.begin(), config_.uavs.end(),
                   [](const UavSpec& a, const UavSpec& b) { return a.id < b.id; });

  for (std::size_t k = 0; k < config_.devices.size(); ++k) {
    const DeviceSpec& d = config_.devices[k];
    const std::string field = "devices[id=" + std::to_string(d.id) + "]";
    if (k > 0 && config_.devices[k - 1].id == d.id) throw ValidationError(field + ".id: duplicate");
    if (!m.in_bounds(d.cell)) throw ValidationError(field + ".cell: outside the grid");
    if (!(d.data_init >= 0.0)) throw ValidationError(field + ".data_init: must be >= 0");
    if (!config_.believed_device_cells.empty() && !m.in_bounds(config_.believed_device_cells[k])) {
      throw ValidationError(field + ": believed cell outside the grid");
    }
    total_initial_data_ += d.data_init;
  }
  for (std::size_t i = 0; i < config_.uavs.size(); ++i) {
    const UavSpec& u = config_.uavs[i];
    const std::string field = "uavs[id=" + std::to_string(u.id) + "]";
    if (i > 0 && config_.uavs[i - 1].id == u.id) throw ValidationError(field + ".id: duplicate");
    if (!(u.altitude_m > 0.0)) throw ValidationError(field + ".altitude_m: must be > 0");
    for (std::size_t j = 0; j < i; ++j) {
      if (config_.uavs[j].altitude_m == u.altitude_m) {
        throw ValidationError(field + ".altitude_m: UAVs must fly at pairwise distinct altitudes");
      }
    }
    if (!(u.battery_init > 0.0) || std::fmod(u.battery_init, 0.5) != 0.0) {
      throw ValidationError(field + ".battery_init: must be a positive multiple of 0.5");
    }
    if (!flyable(m, m.start_cell(), u.altitude_m)) {
      throw ValidationError(field + ": start_cell is blocked at this altitude");
    }
    auto field_ptr = std::make_shared<const DistanceField>(distance_field(m, u.altitude_m));
    const int need = field_ptr->at(m.start_cell());
    if (need == DistanceField::kUnreachable || u.battery_init < need) {
      throw ValidationError(field + ".battery_init: below the " +
                            (need == DistanceField::kUnreachable ? std::string("unbounded")
                                                                 : std::to_string(need)) +
                            " steps needed to reach terminal_cell from start_cell");
    }
    fields_.push_back(std::move(field_ptr));
  }
  los_cache_.assign(config_.uavs.size(),
                    std::vector<signed char>(m.cell_count() * config_.devices.size(), -1));
  links_.n_uavs = n_agents();
  links_.n_devices = n_devices();
}

int Env::steps_to_terminal(int uav) const {
  return fields_[uav]->at(state_.uavs[uav].pos.cell());
}

ActionMask Env::feasible_mask(int uav) const {
  if (uav < 0 || uav >= n_agents()) throw std::out_of_range("feasible_mask: bad uav index");
  ActionMask mask{};
  const UavState& u = state_.uavs[uav];
  if (u.battery <= 0.0) {
    mask[action_index(Action::NoOp)] = true;
    return mask;
  }
  const DistanceField& field = *fields_[uav];
  for (int a = 0; a < kNumActions; ++a) {
    const Action act = action_from_index(a);
    if (act == Action::NoOp) continue;
    const Cell next = displaced(u.pos.cell(), act);
    if (!flyable(map(), next, u.pos.altitude_m)) continue;
    const int need = field.at(next);
    if (need == DistanceField::kUnreachable) continue;
    mask[a] = u.battery - energy_cost(act) >= need;
  }
  return mask;
}

std::vector<Action> Env::feasible_actions(int uav) const {
  const ActionMask mask = feasible_mask(uav);
  std::vector<Action> out;
  for (int a = 0; a < kNumActions; ++a) {
    if (mask[a]) out.push_back(action_from_index(a));
  }
  return out;
}

bool Env::device_los(int uav, int device) {
  const UavState& u = state_.uavs[uav];
  signed char& slot = los_cache_[uav][map().index(u.pos.cell()) * config_.devices.size() + device];
  if (slot < 0) {
    const Cell c = config_.devices[device].cell;
    slot = is_los(map(), u.pos, GridPos{c.ix, c.iy, 0.0}) ? 1 : 0;
  }
  return slot == 1;
}

void Env::sample_links(Rng& rng, std::vector<MeasurementRecord>& log) {
  const int n = n_agents();
  const int k_count = n_devices();
  const LinkModel& model = *config_.channel;
  links_.uav_device.assign(static_cast<std::size_t>(n) * k_count, LinkSample{});
  links_.uav_uav.assign(static_cast<std::size_t>(n) * n, LinkSample{});
  for (int i = 0; i < n; ++i) {
    const UavState& u = state_.uavs[i];
    const Vec3 a = map().center(u.pos);
    for (int k = 0; k < k_count; ++k) {
      const DeviceSpec& d = config_.devices[k];
      const Vec3 b = map().center(GridPos{d.cell.ix, d.cell.iy, 0.0});
      const LinkSample s = sample_link_with_los(model, a, b, device_los(i, k), rng);
      links_.uav_device[static_cast<std::size_t>(i) * k_count + k] = s;
      if (u.done) continue;
      if (config_.log_all_pairs || reachable(s, model.snr_threshold())) {
        log.push_back({config_.uavs[i].id, state_.t, u.pos, d.id, s.gain_db});
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const LinkSample s = sample_link(model, state_.uavs[i].pos, state_.uavs[j].pos, map(), rng);
      links_.uav_uav[static_cast<std::size_t>(i) * n + j] = s;
      links_.uav_uav[static_cast<std::size_t>(j) * n + i] = s;
    }
  }
}

StepOutcome Env::reset(Rng& rng) {
  const Cell start = map().start_cell();
  state_.t = 0;
  state_.uavs.clear();
  for (const UavSpec& u : config_.uavs) {
    state_.uavs.push_back({GridPos{start.ix, start.iy, u.altitude_m}, u.battery_init, false});
  }
  state_.data_remaining.clear();
  for (const DeviceSpec& d : config_.devices) state_.data_remaining.push_back(d.data_init);
  collected_ = 0.0;
  episode_done_ = false;
  frozen_obs_.assign(config_.uavs.size(), std::nullopt);
  schedule_.assign(config_.uavs.size(), -1);

  std::vector<MeasurementRecord> log;
  sample_links(rng, log);
  return make_outcome(0.0, std::vector<double>(config_.uavs.size(), 0.0), std::move(log));
}

StepOutcome Env::step(std::span<const Action> joint_action, Rng& rng) {
  if (episode_done_) throw std::logic_error("Env::step: episode is over; call reset()");
  const int n = n_agents();
  if (static_cast<int>(joint_action.size()) != n) {
    throw std::invalid_argument("Env::step: expected one action per UAV");
  }
  for (int i = 0; i < n; ++i) {
    if (!feasible_mask(i)[action_index(joint_action[i])]) {
      throw std::invalid_argument("Env::step: infeasible action '" +
                                  std::string(action_name(joint_action[i])) + "' for uav " +
                                  std::to_string(config_.uavs[i].id));
    }
  }
  for (int i = 0; i < n; ++i) {
    UavState& u = state_.uavs[i];
    const Cell next = displaced(u.pos.cell(), joint_action[i]);
    u.pos.ix = next.ix;
    u.pos.iy = next.iy;
    u.battery -= energy_cost(joint_action[i]);
    if (u.battery <= 0.0) u.done = true;
  }
  state_.t += 1;
  episode_done_ = std::all_of(state_.uavs.begin(), state_.uavs.end(),
                              [](const UavState& u) { return u.done; });

  std::vector<MeasurementRecord> log;
  sample_links(rng, log);

  std::vector<double> throughputs(n, 0.0);
  double reward = 0.0;
  schedule_.assign(n, -1);
  // Nothing is collected on the slot that ends the mission.
  if (!episode_done_) {
    schedule_ = schedule(state_, links_, config_.channel->snr_threshold());
    const double dt = config_.slot_duration;
    for (int i = 0; i < n; ++i) {
      const int k = schedule_[i];
      if (k < 0) continue;
      double& buffer = state_.data_remaining[k];
      const double rate = links_.device_link(i, k).rate;
      double c;
      if (buffer >= rate * dt) {
        c = rate;
        buffer -= rate * dt;
      } else {
        c = buffer / dt;
        buffer = 0.0;
      }
      throughputs[i] = c;
      reward += c * dt;
    }
  }
  collected_ += reward;
  return make_outcome(reward, std::move(throughputs), std::move(log));
}

StepOutcome Env::make_outcome(double reward, std::vector<double> throughputs,
                              std::vector<MeasurementRecord> measurements) {
  StepOutcome out;
  for (int i = 0; i < n_agents(); ++i) {
    if (state_.uavs[i].done) {
      if (!frozen_obs_[i]) frozen_obs_[i] = build_observation(i);
      out.observations.push_back(*frozen_obs_[i]);
    } else {
      out.observations.push_back(build_observation(i));
    }
  }
  out.global_state = global_state();
  out.reward = reward;
  out.schedule = schedule_;
  out.throughputs = std::move(throughputs);
  out.measurements = std::move(measurements);
  out.episode_done = episode_done_;
  return out;
}

Vec3 Env::believed_device_center(int k) const {
  const Cell c = config_.believed_device_cells.empty() ? config_.devices[k].cell
                                                       : config_.believed_device_cells[k];
  return map().center(GridPos{c.ix, c.iy, 0.0});
}

std::vector<double> Env::observation(int uav) const {
  if (uav < 0 || uav >= n_agents()) throw std::out_of_range("observation: bad uav index");
  if (state_.uavs[uav].done && frozen_obs_[uav]) return *frozen_obs_[uav];
  return build_observation(uav);
}

std::vector<double> Env::build_observation(int i) const {
  const double diag = map().diagonal_m();
  const double threshold = config_.channel->snr_threshold();
  const UavState& me = state_.uavs[i];
  const Vec3 p = map().center(me.pos);

  std::vector<double> obs;
  obs.reserve(obs_dim());
  const ActionMask mask = feasible_mask(i);
  for (bool m : mask) obs.push_back(m ? 1.0 : 0.0);

  for (int k = 0; k < n_devices(); ++k) {
    const LinkSample& link = links_.device_link(i, k);
    const bool chi = reachable(link, threshold);
    const Vec3 u = believed_device_center(k);
    const double init = config_.devices[k].data_init;
    obs.push_back(std::log10(1.0 + link.snr));
    obs.push_back(chi ? 1.0 : 0.0);
    obs.push_back(chi && init > 0.0 ? state_.data_remaining[k] / init : 0.0);
    obs.push_back(distance(p, u) / diag);
    obs.push_back((p.x - u.x) / diag);
    obs.push_back((p.y - u.y) / diag);
    obs.push_back(schedule_[i] == k ? 1.0 : 0.0);
  }
  for (int j = 0; j < n_agents(); ++j) {
    if (j == i) continue;
    const LinkSample& link = links_.peer_link(i, j);
    const bool chi = reachable(link, threshold);
    const Vec3 q = map().center(state_.uavs[j].pos);
    obs.push_back(std::log10(1.0 + link.snr));
    obs.push_back(chi ? 1.0 : 0.0);
    obs.push_back(chi ? distance(p, q) / diag : 0.0);
    obs.push_back(chi ? (p.x - q.x) / diag : 0.0);
    obs.push_back(chi ? (p.y - q.y) / diag : 0.0);
    obs.push_back(chi ? state_.uavs[j].battery / config_.uavs[j].battery_init : 0.0);
  }
  const double b0 = config_.uavs[i].battery_init;
  obs.push_back(me.battery / b0);
  obs.push_back(fields_[i]->at(me.pos.cell()) / b0);
  return obs;
}

std::vector<double> Env::global_state() const {
  std::vector<double> s;
  s.reserve(state_dim());
  const double ex = map().extent_x_m();
  const double ey = map().extent_y_m();
  for (int i = 0; i < n_agents(); ++i) {
    const UavState& u = state_.uavs[i];
    const double b0 = config_.uavs[i].battery_init;
    const Vec3 p = map().center(u.pos);
    s.push_back(u.battery / b0);
    s.push_back(fields_[i]->at(u.pos.cell()) / b0);
    s.push_back(p.x / ex);
    s.push_back(p.y / ey);
    s.push_back(u.done ? 1.0 : 0.0);
  }
  for (int k = 0; k < n_devices(); ++k) {
    const double init = config_.devices[k].data_init;
    const Vec3 u = believed_device_center(k);
    s.push_back(init > 0.0 ? state_.data_remaining[k] / init : 0.0);
    s.push_back(u.x / ex);
    s.push_back(u.y / ey);
  }
  return s;
}

Action random_feasible_action(const ActionMask& mask, Rng& rng) {
  std::array<int, kNumActions> options{};
  int n = 0;
  for (int a = 0; a < kNumActions; ++a) {
    if (mask[a]) options[n++] = a;
  }
  if (n == 0) throw std::invalid_argument("random_feasible_action: empty feasibility mask");
  std::uniform_int_distribution<int> pick(0, n - 1);
  return action_from_index(options[pick(rng)]);
}

// ---------------------------------------------------------------------------

TrajectoryStep snapshot(const Env& env, const StepOutcome& outcome) {
  TrajectoryStep s;
  s.t = env.state().t;
  for (int i = 0; i < env.n_agents(); ++i) {
    s.uav_ids.push_back(env.config().uavs[i].id);
    s.cells.push_back(env.state().uavs[i].pos.cell());
    s.batteries.push_back(env.state().uavs[i].battery);
    const int k = outcome.schedule.empty() ? -1 : outcome.schedule[i];
    s.assigned_device.push_back(k < 0 ? -1 : env.config().devices[k].id);
  }
  s.reward = outcome.reward;
  return s;
}

std::string trajectory_to_json(const std::vector<TrajectoryStep>& steps) {
  using nlohmann::json;
  json arr = json::array();
  for (const TrajectoryStep& s : steps) {
    json uavs = json::array();
    for (std::size_t i = 0; i < s.uav_ids.size(); ++i) {
      json u = {{"id", s.uav_ids[i]},
                {"cell", json::array({s.cells[i].ix, s.cells[i].iy})},
                {"battery", s.batteries[i]}};
      u["device"] = s.assigned_device[i] < 0 ? json(nullptr) : json(s.assigned_device[i]);
      uavs.push_back(std::move(u));
    }
    arr.push_back({{"t", s.t}, {"uavs", std::move(uavs)}, {"reward", s.reward}});
  }
  return arr.dump(1) + "\n";
}

std::vector<TrajectoryStep> trajectory_from_json(const std::string& text) {
  using nlohmann::json;
  std::vector<TrajectoryStep> out;
  try {
    const json arr = json::parse(text);
    if (!arr.is_array()) throw ValidationError("trajectory: expected a JSON array");
    for (const json& rec : arr) {
      TrajectoryStep s;
      s.t = rec.at("t").get<int>();
      s.reward = rec.at("reward").get<double>();
      for (const json& u : rec.at("uavs")) {
        s.uav_ids.push_back(u.at("id").get<int>());
        s.cells.push_back({u.at("cell").at(0).get<int>(), u.at("cell").at(1).get<int>()});
        s.batteries.push_back(u.at("battery").get<double>());
        s.assigned_device.push_back(u.at("device").is_null() ? -1 : u.at("device").get<int>());
      }
      out.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("trajectory: ") + e.what());
  }
  return out;
}

void write_measurements_csv(const std::filesystem::path& path,
                            const std::vector<MeasurementRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write measurements");
  out << "uav_id,t,ix,iy,altitude_m,device_id,gain_db\n";
  char buf[256];
  for (const MeasurementRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%.17g,%d,%.17g\n", r.uav_id, r.t, r.uav_pos.ix,
                  r.uav_pos.iy, r.uav_pos.altitude_m, r.device_id, r.gain_db);
    out << buf;
  }
}

std::vector<MeasurementRecord> read_measurements_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path.string() + ": cannot open measurement CSV");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty measurement CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "uav_id,t,ix,iy,altitude_m,device_id,gain_db") {
    throw ValidationError(path.string() + ":1: unexpected header '" + line + "'");
  }
  std::vector<MeasurementRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    MeasurementRecord r;
    char tail = 0;
    const int n = std::sscanf(line.c_str(), "%d,%d,%d,%d,%lf,%d,%lf%c", &r.uav_id, &r.t,
                              &r.uav_pos.ix, &r.uav_pos.iy, &r.uav_pos.altitude_m, &r.device_id,
                              &r.gain_db, &tail);
    if (n != 7) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": malformed measurement row");
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace uavfed
