#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "uavfed/env.hpp"
#include "uavfed/error.hpp"

using namespace uavfed;
using uavfed::testing::make_env_config;
using uavfed::testing::open_map;

namespace {

LinkTable table(int n_uavs, int n_devices, const std::vector<double>& snr) {
  LinkTable t;
  t.n_uavs = n_uavs;
  t.n_devices = n_devices;
  for (double s : snr) {
    LinkSample l;
    l.snr = s;
    l.rate = rate_from_snr(s);
    t.uav_device.push_back(l);
  }
  t.uav_uav.assign(static_cast<std::size_t>(n_uavs) * n_uavs, LinkSample{});
  return t;
}

EnvState live_state(int n_uavs, int n_devices, double data = 10.0) {
  EnvState s;
  s.uavs.assign(n_uavs, UavState{{0, 0, 60.0}, 10.0, false});
  s.data_remaining.assign(n_devices, data);
  return s;
}

// Oracle: among all matchings built from eligible pairs, pick the one whose SNR list,
// sorted descending, is lexicographically largest. With distinct SNRs this is the unique
// outcome of processing pairs by decreasing SNR.
Assignment lexicographic_best(const EnvState& state, const LinkTable& links, double threshold) {
  const int n = links.n_uavs;
  const int k = links.n_devices;
  Assignment best(n, -1);
  std::vector<double> best_key;
  Assignment cur(n, -1);
  std::vector<bool> used(k, false);
  std::function<void(int)> rec = [&](int i) {
    if (i == n) {
      std::vector<double> key;
      for (int u = 0; u < n; ++u) {
        if (cur[u] >= 0) key.push_back(links.device_link(u, cur[u]).snr);
      }
      std::sort(key.rbegin(), key.rend());
      if (best_key.empty() || std::lexicographical_compare(best_key.begin(), best_key.end(), key.begin(), key.end())) {
        best_key = key;
        best = cur;
      }
      return;
    }
    cur[i] = -1;
    rec(i + 1);
    if (state.uavs[i].done) return;
    for (int d = 0; d < k; ++d) {
      if (used[d] || !(state.data_remaining[d] > 0.0) || links.device_link(i, d).snr < threshold) continue;
      used[d] = true;
      cur[i] = d;
      rec(i + 1);
      used[d] = false;
      cur[i] = -1;
    }
  };
  rec(0);
  return best;
}

}  // namespace

TEST_SUITE("env") {

TEST_CASE("reset: RBM scenario starts every UAV at the base") {
  Env env(uavfed::testing::rbm_env_config());
  Rng rng(3);
  const StepOutcome out = env.reset(rng);
  CHECK(env.state().t == 0);
  REQUIRE(env.n_agents() == 3);
  for (const UavState& u : env.state().uavs) {
    CHECK(u.pos.cell() == env.map().start_cell());
    CHECK(u.pos.cell() == Cell{30, 40});
    CHECK(u.battery == 60.0);
    CHECK_FALSE(u.done);
  }
  for (double d : env.state().data_remaining) CHECK(d == 16000.0);
  CHECK(out.reward == 0.0);
  CHECK(env.collected() == 0.0);
  CHECK(out.observations.size() == 3);
}

TEST_CASE("config: invariants are enforced") {
  SUBCASE("equal altitudes") {
    CHECK_THROWS_AS(Env(make_env_config(open_map(3, 3), {}, {{0, 60.0, 5.0}, {1, 60.0, 5.0}})), ValidationError);
  }
  SUBCASE("battery below the return distance") {
    CHECK_THROWS_AS(Env(make_env_config(open_map(5, 5, 10.0, {0, 0}, {4, 4}), {}, {{0, 60.0, 7.0}})),
                    ValidationError);
  }
  SUBCASE("battery not on the half-unit grid") {
    CHECK_THROWS_AS(Env(make_env_config(open_map(3, 3), {}, {{0, 60.0, 2.3}})), ValidationError);
  }
  SUBCASE("device outside the map") {
    CHECK_THROWS_AS(Env(make_env_config(open_map(3, 3), {{0, {3, 0}, 1.0, true}}, {{0, 60.0, 5.0}})),
                    ValidationError);
  }
}

TEST_CASE("feasible_actions: battery equal to distance forces shortest-path moves") {
  Env env(make_env_config(open_map(6, 6, 10.0, {0, 0}, {3, 2}), {}, {{0, 60.0, 5.0}}));
  Rng rng(1);
  env.reset(rng);
  const std::vector<Action> acts = env.feasible_actions(0);
  CHECK(acts == std::vector<Action>{Action::North, Action::East});
  // Hover would leave 4.5 < 5.
  CHECK_FALSE(env.feasible_mask(0)[action_index(Action::Hover)]);
}

TEST_CASE("feasible_actions: drained battery allows only no-op") {
  Env env(make_env_config(open_map(3, 3), {}, {{0, 60.0, 0.5}}));
  Rng rng(1);
  env.reset(rng);
  CHECK(env.feasible_actions(0) == std::vector<Action>{Action::Hover});
  const Action hover = Action::Hover;
  const StepOutcome out = env.step({&hover, 1}, rng);
  CHECK(env.state().uavs[0].battery == 0.0);
  CHECK(out.episode_done);
  CHECK(env.feasible_actions(0) == std::vector<Action>{Action::NoOp});
}

TEST_CASE("feasible_actions: unconstrained interior cell") {
  Env env(make_env_config(open_map(5, 5, 10.0, {2, 2}, {2, 2}), {}, {{0, 60.0, 40.0}}));
  Rng rng(1);
  env.reset(rng);
  CHECK(env.feasible_actions(0) ==
        std::vector<Action>{Action::Hover, Action::North, Action::West, Action::South, Action::East});
}

TEST_CASE("feasible_actions: map edge and no-fly cells are excluded") {
  std::vector<double> h(9, 0.0);
  h[1 * 3 + 0] = 70.0;  // cell (0, 1) is taller than the UAV
  Env env(make_env_config(uavfed::testing::map_with_heights(3, 3, h), {}, {{0, 60.0, 10.0}}));
  Rng rng(1);
  env.reset(rng);
  CHECK(env.feasible_actions(0) == std::vector<Action>{Action::Hover, Action::East});
}

TEST_CASE("step: battery accounting") {
  Env env(make_env_config(open_map(5, 5, 10.0, {2, 2}, {2, 2}), {}, {{0, 60.0, 10.0}}));
  Rng rng(1);
  env.reset(rng);
  Action a = Action::Hover;
  env.step({&a, 1}, rng);
  CHECK(env.state().uavs[0].battery == 9.5);
  a = Action::East;
  env.step({&a, 1}, rng);
  CHECK(env.state().uavs[0].battery == 8.5);
  CHECK(env.state().uavs[0].pos.cell() == Cell{3, 2});
  a = Action::South;
  env.step({&a, 1}, rng);
  CHECK(env.state().uavs[0].battery == 7.5);
  CHECK(env.state().uavs[0].pos.cell() == Cell{3, 1});
}

TEST_CASE("step: infeasible action is a contract violation") {
  Env env(make_env_config(open_map(3, 3), {}, {{0, 60.0, 4.0}}));
  Rng rng(1);
  env.reset(rng);
  Action a = Action::West;
  CHECK_THROWS_AS(env.step({&a, 1}, rng), std::invalid_argument);
  a = Action::NoOp;
  CHECK_THROWS_AS(env.step({&a, 1}, rng), std::invalid_argument);
}

TEST_CASE("step: buffer-limited collection empties the device exactly") {
  const CityMap m = open_map(3, 3, 10.0, {1, 1}, {1, 1});
  ChannelParams p = uavfed::testing::noiseless();
  // Choose noise so the overhead link has SNR 31, i.e. rate 5.
  const double g = gain_db(p, 60.0, true, 0.0);
  p.noise_power_w = p.tx_power_w * std::pow(10.0, 0.1 * g) / 31.0;
  Env env(make_env_config(m, {{0, {1, 1}, 3.0, true}}, {{0, 60.0, 5.0}}, p));
  Rng rng(5);
  env.reset(rng);
  Action a = Action::Hover;
  const StepOutcome out = env.step({&a, 1}, rng);
  CHECK(env.links().device_link(0, 0).rate == doctest::Approx(5.0));
  CHECK(out.schedule[0] == 0);
  CHECK(out.throughputs[0] == 3.0);
  CHECK(env.state().data_remaining[0] == 0.0);
  CHECK(out.reward == 3.0);
  // Empty devices are never scheduled again.
  const StepOutcome next = env.step({&a, 1}, rng);
  CHECK(next.schedule[0] == -1);
  CHECK(next.reward == 0.0);
}

TEST_CASE("step: reward sums the throughput of every assignment") {
  const CityMap m = open_map(3, 3, 10.0, {1, 1}, {1, 1});
  ChannelParams p = uavfed::testing::noiseless();
  p.noise_power_w = 1e-12;  // rates well above 5
  Env env(make_env_config(m, {{0, {1, 1}, 3.0, true}, {1, {1, 1}, 5.0, true}},
                          {{0, 60.0, 5.0}, {1, 65.0, 5.0}}, p));
  Rng rng(5);
  env.reset(rng);
  const std::vector<Action> joint{Action::Hover, Action::Hover};
  const StepOutcome out = env.step(joint, rng);
  CHECK(out.reward == 8.0);
  CHECK(env.state().data_remaining[0] == 0.0);
  CHECK(env.state().data_remaining[1] == 0.0);
}

TEST_CASE("step: no collection on the slot that ends the mission") {
  const CityMap m = open_map(3, 3, 10.0, {1, 1}, {1, 1});
  Env env(make_env_config(m, {{0, {1, 1}, 100.0, true}}, {{0, 60.0, 0.5}}));
  Rng rng(5);
  env.reset(rng);
  const Action a = Action::Hover;
  const StepOutcome out = env.step({&a, 1}, rng);
  CHECK(out.episode_done);
  CHECK(out.reward == 0.0);
  CHECK(env.state().data_remaining[0] == 100.0);
  CHECK_THROWS_AS(env.step({&a, 1}, rng), std::logic_error);
}

TEST_CASE("schedule: single UAV takes the strongest device") {
  const EnvState s = live_state(1, 2);
  const Assignment a = schedule(s, table(1, 2, {5.0, 3.0}), 0.05);
  CHECK(a == Assignment{0});
  CHECK(schedule(s, table(1, 2, {3.0, 5.0}), 0.05) == Assignment{1});
}

TEST_CASE("schedule: contention resolved by global SNR order") {
  const EnvState s = live_state(2, 2);
  // UAV0: A 7, B 2; UAV1: A 6, B 1.
  const LinkTable links = table(2, 2, {7.0, 2.0, 6.0, 1.0});
  const Assignment a = schedule(s, links, 0.05);
  CHECK(a == Assignment{0, 1});
  CHECK(a == lexicographic_best(s, links, 0.05));
}

TEST_CASE("schedule: empty buffers, dead links and done UAVs are skipped") {
  EnvState s = live_state(2, 2, 0.0);
  CHECK(schedule(s, table(2, 2, {7.0, 2.0, 6.0, 1.0}), 0.05) == Assignment{-1, -1});
  s = live_state(2, 2);
  s.uavs[0].done = true;
  CHECK(schedule(s, table(2, 2, {7.0, 2.0, 6.0, 1.0}), 0.05) == Assignment{-1, 0});
  CHECK(schedule(live_state(1, 1), table(1, 1, {0.01}), 0.05) == Assignment{-1});
}

TEST_CASE("schedule: equal SNRs break ties by uav then device index") {
  const EnvState s = live_state(2, 2);
  CHECK(schedule(s, table(2, 2, {4.0, 4.0, 4.0, 4.0}), 0.05) == Assignment{0, 1});
}

TEST_CASE("schedule: matches exhaustive lexicographic oracle on random instances") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> snr(0.0, 10.0);
  std::uniform_int_distribution<int> count(1, 4);
  std::bernoulli_distribution empty(0.2);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = count(rng), k = count(rng);
    EnvState s = live_state(n, k);
    for (double& d : s.data_remaining) d = empty(rng) ? 0.0 : 1.0;
    std::vector<double> v(static_cast<std::size_t>(n) * k);
    for (double& x : v) x = snr(rng);
    const LinkTable links = table(n, k, v);
    const Assignment a = schedule(s, links, 1.0);
    CHECK(a == lexicographic_best(s, links, 1.0));
    // Each UAV serves at most one device (by construction) and each device at most one UAV.
    std::vector<int> per_device(k, 0);
    for (int d : a) {
      if (d >= 0) ++per_device[d];
    }
    for (int c : per_device) CHECK(c <= 1);
  }
}

TEST_CASE("observation: layout, masking of unreachable devices and peers") {
  const CityMap m = open_map(6, 6, 10.0, {0, 0}, {0, 0});
  ChannelParams p;
  p.snr_threshold = 1e12;  // nothing is reachable
  Env env(make_env_config(m, {{0, {5, 5}, 7.0, true}, {1, {3, 0}, 9.0, false}},
                          {{0, 55.0, 12.0}, {1, 60.0, 12.0}, {2, 65.0, 12.0}}, p));
  Rng rng(8);
  env.reset(rng);
  const int K = 2, I = 3;
  const std::vector<double> obs = env.observation(0);
  REQUIRE(static_cast<int>(obs.size()) == 6 + 7 * K + 6 * (I - 1) + 2);
  CHECK(env.obs_dim() == static_cast<int>(obs.size()));
  for (int k = 0; k < K; ++k) {
    const double* dev = obs.data() + 6 + 7 * k;
    CHECK(dev[0] > 0.0);   // log-scaled SNR stays visible
    CHECK(dev[1] == 0.0);  // chi
    CHECK(dev[2] == 0.0);  // data masked
    CHECK(dev[3] > 0.0);   // distance kept
  }
  for (int j = 0; j < I - 1; ++j) {
    const double* peer = obs.data() + 6 + 7 * K + 6 * j;
    CHECK(peer[0] > 0.0);
    for (int f = 1; f < 6; ++f) CHECK(peer[f] == 0.0);
  }
  CHECK(obs.back() == 0.0);                    // steps to terminal / battery
  CHECK(obs[obs.size() - 2] == 1.0);           // full battery
}

TEST_CASE("observation: reachable device exposes its scaled buffer") {
  const CityMap m = open_map(6, 6, 10.0, {0, 0}, {0, 0});
  Env env(make_env_config(m, {{0, {1, 1}, 8.0, true}}, {{0, 55.0, 12.0}}, uavfed::testing::noiseless()));
  Rng rng(8);
  env.reset(rng);
  const std::vector<double> obs = env.observation(0);
  CHECK(obs[6 + 1] == 1.0);
  CHECK(obs[6 + 2] == 1.0);
  const double diag = m.diagonal_m();
  CHECK(obs[6 + 4] == doctest::Approx(-10.0 / diag));
  CHECK(obs[6 + 5] == doctest::Approx(-10.0 / diag));
}

TEST_CASE("global state: layout, done flag and fixed device coordinates") {
  const CityMap m = open_map(4, 4, 10.0, {0, 0}, {0, 0});
  Env env(make_env_config(m, {{0, {3, 3}, 8.0, true}, {1, {2, 0}, 4.0, false}},
                          {{0, 55.0, 1.0}, {1, 60.0, 2.0}}));
  Rng rng(2);
  StepOutcome out = env.reset(rng);
  CHECK(static_cast<int>(out.global_state.size()) == 5 * 2 + 3 * 2);
  const std::vector<double> devices0(out.global_state.begin() + 10, out.global_state.end());
  std::vector<Action> joint{Action::Hover, Action::Hover};
  out = env.step(joint, rng);
  CHECK(out.global_state[4] == 0.0);  // 0.5 left
  out = env.step(joint, rng);
  CHECK(out.global_state[4] == 1.0);  // UAV 0 drained
  CHECK(out.global_state[9] == 0.0);
  for (int k = 0; k < 2; ++k) {
    CHECK(out.global_state[10 + 3 * k + 1] == devices0[3 * k + 1]);
    CHECK(out.global_state[10 + 3 * k + 2] == devices0[3 * k + 2]);
  }
}

TEST_CASE("properties: conservation, battery ledger, safety and determinism over random episodes") {
  EnvConfig cfg = uavfed::testing::rbm_env_config();
  Env env(cfg);
  Env twin(cfg);
  for (int episode = 0; episode < 5; ++episode) {
    Rng rng(100 + episode), policy(900 + episode);
    Rng rng2(100 + episode), policy2(900 + episode);
    env.reset(rng);
    twin.reset(rng2);
    std::vector<double> spent(3, 0.0);
    double total_reward = 0.0;
    std::vector<double> prev_data = env.state().data_remaining;
    bool done = false;
    while (!done) {
      std::vector<Action> joint, joint2;
      for (int i = 0; i < env.n_agents(); ++i) {
        joint.push_back(random_feasible_action(env.feasible_mask(i), policy));
        joint2.push_back(random_feasible_action(twin.feasible_mask(i), policy2));
        spent[i] += energy_cost(joint.back());
      }
      const StepOutcome out = env.step(joint, rng);
      const StepOutcome out2 = twin.step(joint2, rng2);
      CHECK(out.reward == out2.reward);
      CHECK(out.observations == out2.observations);
      CHECK(out.global_state == out2.global_state);
      total_reward += out.reward;
      for (std::size_t k = 0; k < prev_data.size(); ++k) {
        CHECK(env.state().data_remaining[k] >= 0.0);
        CHECK(env.state().data_remaining[k] <= prev_data[k]);
      }
      prev_data = env.state().data_remaining;
      done = out.episode_done;
    }
    double drained = 0.0;
    for (std::size_t k = 0; k < cfg.devices.size(); ++k) {
      drained += cfg.devices[k].data_init - env.state().data_remaining[k];
    }
    CHECK(total_reward == doctest::Approx(drained).epsilon(1e-12));
    for (int i = 0; i < env.n_agents(); ++i) {
      const UavState& u = env.state().uavs[i];
      CHECK(u.pos.cell() == env.map().terminal_cell());
      CHECK(u.battery == 0.0);
      CHECK(60.0 - u.battery == spent[i]);
    }
  }
}

TEST_CASE("measurements: reachable links only unless all pairs requested") {
  const CityMap m = open_map(4, 4, 10.0, {0, 0}, {0, 0});
  ChannelParams p;
  p.snr_threshold = 1e12;
  EnvConfig cfg = make_env_config(m, {{4, {3, 3}, 8.0, true}}, {{7, 55.0, 4.0}}, p);
  Rng rng(1);
  {
    Env env(cfg);
    CHECK(env.reset(rng).measurements.empty());
  }
  cfg.log_all_pairs = true;
  Env env(cfg);
  const StepOutcome out = env.reset(rng);
  REQUIRE(out.measurements.size() == 1);
  CHECK(out.measurements[0].uav_id == 7);
  CHECK(out.measurements[0].device_id == 4);
  CHECK(out.measurements[0].uav_pos.altitude_m == 55.0);
}

TEST_CASE("export: measurement CSV and trajectory JSON round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "uavfed_env_test";
  std::filesystem::create_directories(dir);
  std::vector<MeasurementRecord> recs{{0, 3, {4, 5, 55.0}, 2, -87.123456789012345},
                                      {1, 4, {1, 2, 60.0}, 0, -101.5}};
  write_measurements_csv(dir / "m.csv", recs);
  const auto back = read_measurements_csv(dir / "m.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].gain_db == recs[0].gain_db);
  CHECK(back[1].uav_pos.altitude_m == 60.0);

  Env env(uavfed::testing::rbm_env_config());
  Rng rng(4), policy(5);
  std::vector<TrajectoryStep> traj{snapshot(env, env.reset(rng))};
  for (int s = 0; s < 5; ++s) {
    std::vector<Action> joint;
    for (int i = 0; i < env.n_agents(); ++i) joint.push_back(random_feasible_action(env.feasible_mask(i), policy));
    traj.push_back(snapshot(env, env.step(joint, rng)));
  }
  const std::string text = trajectory_to_json(traj);
  CHECK(trajectory_to_json(trajectory_from_json(text)) == text);
  CHECK_THROWS_AS(trajectory_from_json("{\"a\": 1}"), ValidationError);
}

}  // TEST_SUITE
