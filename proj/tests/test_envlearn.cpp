#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "envlearn_fixtures.hpp"
#include "fixtures.hpp"
#include "uavfed/envlearn.hpp"
#include "uavfed/error.hpp"

using namespace uavfed;
using uavfed::testing::calibration_scene;
using uavfed::testing::calibration_survey;
using uavfed::testing::fleet_measurements;

namespace {

LearnedChannel flat_sigma_channel(double sigma_l, double sigma_n) {
  ChannelParams p;
  p.sigma_los = sigma_l;
  p.sigma_nlos = sigma_n;
  return LearnedChannel::from_params(p);
}

// Measurement with exactly the channel mean for the given geometry.
MeasurementRecord exact_record(const CityMap& m, const LinkModel& ch, GridPos uav, Cell dev, int id) {
  const GridPos d{dev.ix, dev.iy, 0.0};
  const Vec3 a = m.center(uav), b = m.center(d);
  return {0, 0, uav, id, ch.mean_gain_db(distance(a, b), elevation_angle(a, b), is_los(m, uav, d))};
}

}  // namespace

TEST_SUITE("envlearn") {

TEST_CASE("nll: equal sigmas and zero residuals give zero") {
  const CityMap m = uavfed::testing::open_map(10, 10);
  const LearnedChannel ch = flat_sigma_channel(3.0, 3.0);
  std::vector<MeasurementRecord> recs;
  for (int k = 0; k < 5; ++k) recs.push_back(exact_record(m, ch, {k, 2 * k % 10, 40.0}, {4, 4}, 1));
  CHECK(nll(recs, m.center(GridPos{4, 4, 0.0}), ch, m) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("nll: one LoS measurement with zero residual gives log of the variance ratio") {
  const CityMap m = uavfed::testing::open_map(10, 10);
  const LearnedChannel ch = flat_sigma_channel(2.0, 5.0);
  const std::vector<MeasurementRecord> recs{exact_record(m, ch, {1, 1, 40.0}, {6, 3}, 1)};
  CHECK(nll(recs, m.center(GridPos{6, 3, 0.0}), ch, m) == doctest::Approx(std::log(4.0 / 25.0)).epsilon(1e-12));
}

TEST_CASE("nll: adding a residual strictly increases it; record order does not matter") {
  const CityMap m = uavfed::testing::map_with_heights(6, 6, std::vector<double>(36, 0.0));
  const LearnedChannel ch = flat_sigma_channel(2.0, 5.0);
  std::vector<MeasurementRecord> recs;
  for (int k = 0; k < 6; ++k) recs.push_back(exact_record(m, ch, {k, 5 - k, 30.0}, {2, 2}, 0));
  const Vec3 cand = m.center(GridPos{3, 2, 0.0});
  const double base = nll(recs, cand, ch, m);
  std::vector<MeasurementRecord> noisy = recs;
  noisy[2].gain_db += 0.5;
  // The candidate is off the true cell, so residuals exist; perturbing towards larger error
  // at the true position is the clean case.
  const Vec3 truth = m.center(GridPos{2, 2, 0.0});
  CHECK(nll(noisy, truth, ch, m) > nll(recs, truth, ch, m));
  std::vector<MeasurementRecord> shuffled = recs;
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[1], shuffled[4]);
  CHECK(nll(shuffled, cand, ch, m) == doctest::Approx(base).epsilon(1e-13));
  CHECK_THROWS_AS(nll({}, cand, ch, m), InsufficientDataError);
}

TEST_CASE("fit_channel: noiseless data recovers the parameters exactly") {
  const auto scene = calibration_scene();
  const ChannelParams truth = uavfed::testing::noiseless();
  Rng rng(1);
  const auto recs = calibration_survey(scene, GroundTruthChannel(truth), 600, rng);
  const LearnedChannel ch = fit_channel(recs, scene.anchors, scene.map, RadioConstants::from(truth));
  CHECK(std::abs(ch.los_model().alpha - truth.alpha_los) < 1e-6);
  CHECK(std::abs(ch.los_model().beta - truth.beta_los) < 1e-6);
  CHECK(std::abs(ch.nlos_model().alpha - truth.alpha_nlos) < 1e-6);
  CHECK(std::abs(ch.nlos_model().beta - truth.beta_nlos) < 1e-6);
  CHECK_FALSE(ch.any_fallback());
  CHECK(ch.los_model().sigma > 0.0);
}

TEST_CASE("fit_channel: shadowing estimate from 5000 samples") {
  const auto scene = calibration_scene();
  const ChannelParams truth;
  Rng rng(2);
  const auto recs = calibration_survey(scene, GroundTruthChannel(truth), 5000, rng);
  const LearnedChannel ch = fit_channel(recs, scene.anchors, scene.map, RadioConstants::from(truth));
  CHECK(ch.los_model().sigma >= 1.8);
  CHECK(ch.los_model().sigma <= 2.2);
  CHECK(ch.nlos_model().sigma >= 4.5);
  CHECK(ch.nlos_model().sigma <= 5.5);
  CHECK(ch.los_model().samples + ch.nlos_model().samples == 5000);
}

TEST_CASE("fit_channel: parameter error shrinks with more samples") {
  const auto scene = calibration_scene();
  const ChannelParams truth;
  const GroundTruthChannel gt(truth);
  std::vector<double> mean_err;
  for (std::size_t n : {150u, 1500u, 15000u}) {
    double err = 0.0;
    for (int seed = 0; seed < 6; ++seed) {
      Rng rng(100 + seed);
      const auto recs = calibration_survey(scene, gt, n, rng);
      const LearnedChannel ch = fit_channel(recs, scene.anchors, scene.map, RadioConstants::from(truth));
      err += std::abs(ch.los_model().beta - truth.beta_los) + std::abs(ch.nlos_model().beta - truth.beta_nlos) +
             10.0 * std::abs(ch.los_model().alpha - truth.alpha_los) +
             10.0 * std::abs(ch.nlos_model().alpha - truth.alpha_nlos);
    }
    mean_err.push_back(err / 6);
  }
  CAPTURE(mean_err[0]);
  CAPTURE(mean_err[1]);
  CAPTURE(mean_err[2]);
  CHECK(mean_err[1] < mean_err[0]);
  CHECK(mean_err[2] < mean_err[1]);
}

TEST_CASE("fit_channel: too few measurements and single-class fallback") {
  const auto scene = calibration_scene();
  const ChannelParams truth;
  CHECK_THROWS_AS(fit_channel({}, scene.anchors, scene.map, RadioConstants::from(truth)), InsufficientDataError);
  Rng rng(3);
  const auto few = calibration_survey(scene, GroundTruthChannel(truth), 20, rng);
  CHECK_THROWS_AS(fit_channel(few, scene.anchors, scene.map, RadioConstants::from(truth)), InsufficientDataError);
  // Non-anchor records are ignored.
  std::vector<MeasurementRecord> others = calibration_survey(scene, GroundTruthChannel(truth), 200, rng);
  for (auto& r : others) r.device_id = 99;
  CHECK_THROWS_AS(fit_channel(others, scene.anchors, scene.map, RadioConstants::from(truth)), InsufficientDataError);

  // An open map only ever yields LoS samples.
  const CityMap open = uavfed::testing::open_map(30, 30, 10.0);
  const std::vector<DeviceSpec> anchors{{0, {15, 15}, 1.0, true}};
  std::vector<MeasurementRecord> los_only;
  const GroundTruthChannel gt(truth);
  for (int k = 0; k < 100; ++k) {
    const GridPos u{k % 30, (7 * k) % 30, 50.0};
    los_only.push_back({0, 0, u, 0, sample_link(gt, u, {15, 15, 0.0}, open, rng).gain_db});
  }
  const LearnedChannel ch = fit_channel(los_only, anchors, open, RadioConstants::from(truth));
  CHECK(ch.nlos_model().fallback);
  CHECK_FALSE(ch.los_model().fallback);
  CHECK(ch.nlos_model().samples == 0);
  CHECK(ch.nlos_model().sigma == ch.los_model().sigma);
}

TEST_CASE("fit_channel: network psi fits the gain law") {
  const auto scene = calibration_scene();
  const ChannelParams truth;
  Rng rng(4);
  const auto recs = calibration_survey(scene, GroundTruthChannel(truth), 2000, rng);
  ChannelFitOptions opt;
  opt.kind = PsiKind::Network;
  opt.seed = 5;
  const LearnedChannel ch = fit_channel(recs, scene.anchors, scene.map, RadioConstants::from(truth), opt);
  CHECK(ch.kind() == PsiKind::Network);
  CHECK(ch.los_model().sigma < 2.6);
  CHECK(ch.nlos_model().sigma < 5.6);
  // Mean predictions follow the true law at typical ranges.
  for (double d : {20.0, 60.0, 120.0}) {
    const double phi = std::asin(0.5);
    CAPTURE(d);
    // Long clear links are rare among the pillars, so LoS is only probed at short range.
    if (d < 100.0) CHECK(std::abs(ch.mean_gain_db(d, phi, true) - gain_db(truth, d, true, 0.0)) < 2.0);
    CHECK(std::abs(ch.mean_gain_db(d, phi, false) - gain_db(truth, d, false, 0.0)) < 3.0);
  }
}

TEST_CASE("localize: noiseless data, true channel, reaches the true-position likelihood") {
  const MapDocument doc = load_map_document(uavfed::testing::config_dir() / "desk_map.json");
  const CityMap& m = doc.map;
  ChannelParams p = uavfed::testing::noiseless();
  // Unit sigmas keep the likelihood finite; the measurements themselves carry no noise.
  const LearnedChannel ch = flat_sigma_channel(1.0, 1.0);
  p = {};
  const DeviceSpec dev = doc.devices[1];
  std::vector<MeasurementRecord> recs;
  for (const GridPos u : {GridPos{3, 12, 55.0}, GridPos{5, 15, 55.0}, GridPos{2, 10, 60.0}, GridPos{6, 13, 60.0},
                          GridPos{10, 10, 55.0}, GridPos{4, 16, 60.0}}) {
    recs.push_back(exact_record(m, ch, u, dev.cell, dev.id));
  }
  PsoConfig pso;
  pso.iterations = 300;
  pso.min_measurements = 3;
  pso.seed = 11;
  const LocalizationResult r = localize(dev.id, recs, ch, m, pso);
  const double at_truth = nll(recs, m.center(GridPos{dev.cell.ix, dev.cell.iy, 0.0}), ch, m);
  CHECK(r.nll <= at_truth + 1e-6);
  CHECK_FALSE(r.low_confidence);
}

TEST_CASE("localize: PSO never does worse than the cell-centre grid and stays in bounds") {
  const MapDocument doc = load_map_document(uavfed::testing::config_dir() / "desk_map.json");
  const CityMap& m = doc.map;
  const ChannelParams p;
  const GroundTruthChannel gt(p);
  const LearnedChannel ch = LearnedChannel::from_params(p);
  for (int seed = 0; seed < 4; ++seed) {
    Rng rng(50 + seed);
    const auto recs = fleet_measurements(m, doc.devices, gt, 60, rng, {55.0, 60.0});
    for (const DeviceSpec& d : doc.devices) {
      PsoConfig pso;
      pso.seed = seed;
      const LocalizationResult r = localize(d.id, recs, ch, m, pso);
      const LocalizationResult g = grid_search(d.id, recs, ch, m);
      CHECK(r.nll <= g.nll + 1e-6);
      CHECK(r.position.x >= 0.0);
      CHECK(r.position.x <= m.extent_x_m());
      CHECK(r.position.y >= 0.0);
      CHECK(r.position.y <= m.extent_y_m());
      CHECK(r.measurements == 60);
    }
  }
}

TEST_CASE("localize: deterministic, zero iterations returns the best initial particle") {
  const MapDocument doc = load_map_document(uavfed::testing::config_dir() / "desk_map.json");
  const CityMap& m = doc.map;
  const ChannelParams p;
  const LearnedChannel ch = LearnedChannel::from_params(p);
  Rng rng(9);
  const auto recs = fleet_measurements(m, {doc.devices[3]}, GroundTruthChannel(p), 30, rng, {55.0});
  PsoConfig pso;
  pso.seed = 3;
  const LocalizationResult a = localize(3, recs, ch, m, pso);
  const LocalizationResult b = localize(3, recs, ch, m, pso);
  CHECK(a.position.x == b.position.x);
  CHECK(a.position.y == b.position.y);

  pso.iterations = 0;
  pso.particles = 7;
  const LocalizationResult z = localize(3, recs, ch, m, pso);
  // Regenerate the initial swarm: per particle x, y, then vx, vy.
  Rng init(pso.seed);
  std::uniform_real_distribution<double> ux(0.0, m.extent_x_m()), uy(0.0, m.extent_y_m());
  std::uniform_real_distribution<double> vx(-0.2 * m.extent_x_m(), 0.2 * m.extent_x_m());
  std::uniform_real_distribution<double> vy(-0.2 * m.extent_y_m(), 0.2 * m.extent_y_m());
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 7; ++i) {
    const double x = ux(init), y = uy(init);
    vx(init);
    vy(init);
    best = std::min(best, nll(recs, {x, y, 0.0}, ch, m));
  }
  CHECK(z.nll == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("localize: too few measurements keeps the previous estimate or guesses, flagged") {
  const CityMap m = uavfed::testing::open_map(10, 10);
  const LearnedChannel ch = LearnedChannel::from_params(ChannelParams{});
  const std::vector<MeasurementRecord> recs{exact_record(m, ch, {1, 1, 40.0}, {5, 5}, 4)};
  const PsoConfig pso;
  const LocalizationResult warm = localize(4, recs, ch, m, pso, Vec3{12.0, 34.0, 0.0});
  CHECK(warm.low_confidence);
  CHECK(warm.position.x == 12.0);
  CHECK(warm.position.y == 34.0);
  const LocalizationResult guess = localize(4, {}, ch, m, pso);
  CHECK(guess.low_confidence);
  CHECK(guess.position.x >= 0.0);
  CHECK(guess.position.x <= m.extent_x_m());
  CHECK(guess.measurements == 0);
}

TEST_CASE("build_simulated_env: all anchors and a perfect channel reproduce the real env") {
  const MapDocument doc = load_map_document(uavfed::testing::config_dir() / "desk_map.json");
  for (const ChannelParams p : {uavfed::testing::noiseless(), ChannelParams{}}) {
    std::vector<DeviceSpec> devs = doc.devices;
    for (auto& d : devs) d.anchor = true;
    const EnvConfig real = uavfed::testing::make_env_config(doc.map, devs, {{0, 55.0, 12.0}, {1, 60.0, 12.0}}, p);
    const EnvConfig sim_cfg =
        build_simulated_env(real, {}, std::make_shared<const LearnedChannel>(LearnedChannel::from_params(p)));
    Env a(real), b(sim_cfg);
    Rng ra(5), rb(5), pa(6);
    StepOutcome oa = a.reset(ra), ob = b.reset(rb);
    while (true) {
      CHECK(oa.observations == ob.observations);
      CHECK(oa.global_state == ob.global_state);
      CHECK(oa.reward == ob.reward);
      if (oa.episode_done) break;
      std::vector<Action> act;
      for (int i = 0; i < a.n_agents(); ++i) act.push_back(random_feasible_action(a.feasible_mask(i), pa));
      oa = a.step(act, ra);
      ob = b.step(act, rb);
    }
    CHECK(b.episode_done());
    CHECK(a.collected() == b.collected());
  }
}

TEST_CASE("build_simulated_env: a one-cell estimate error changes only that device's fields") {
  const MapDocument doc = load_map_document(uavfed::testing::config_dir() / "desk_map.json");
  const ChannelParams p = uavfed::testing::noiseless();
  const EnvConfig real = uavfed::testing::make_env_config(doc.map, doc.devices, {{0, 55.0, 12.0}}, p);
  std::map<int, LocalizationResult> est;
  for (const auto& d : doc.devices) {
    if (d.anchor) continue;
    LocalizationResult r;
    r.device_id = d.id;
    r.position = doc.map.center(GridPos{d.cell.ix, d.cell.iy, 0.0});
    est[d.id] = r;
  }
  est[3].position.x += doc.map.cell_size_m();
  const EnvConfig sim_cfg =
      build_simulated_env(real, est, std::make_shared<const LearnedChannel>(LearnedChannel::from_params(p)));
  for (std::size_t k = 0; k < real.devices.size(); ++k) {
    CHECK(sim_cfg.devices[k].data_init == real.devices[k].data_init);
    CHECK(sim_cfg.devices[k].anchor == real.devices[k].anchor);
  }
  CHECK(sim_cfg.devices[3].cell == Cell{real.devices[3].cell.ix + 1, real.devices[3].cell.iy});
  Env a(real), b(sim_cfg);
  Rng ra(1), rb(1);
  const auto oa = a.reset(ra).observations[0];
  const auto ob = b.reset(rb).observations[0];
  for (int k = 0; k < 4; ++k) {
    const auto first = oa.begin() + kNumActions + 7 * k;
    const bool same = std::equal(first, first + 7, ob.begin() + kNumActions + 7 * k);
    if (k == 3) {
      CHECK_FALSE(same);
      CHECK(oa[kNumActions + 7 * k] != ob[kNumActions + 7 * k]);  // SNR field
    } else {
      CHECK(same);
    }
  }
  CHECK_THROWS_AS(build_simulated_env(real, {}, real.channel), std::invalid_argument);
}

TEST_CASE("localization report CSV") {
  const auto dir = std::filesystem::temp_directory_path() / "uavfed_report";
  std::filesystem::create_directories(dir);
  LocalizationReportRow row;
  row.result.device_id = 3;
  row.result.position = {12.5, 40.0, 0.0};
  row.result.nll = 17.25;
  row.result.measurements = 42;
  write_localization_report(dir / "a.csv", {row});
  row.error_m = 1.5;
  write_localization_report(dir / "b.csv", {row});
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  };
  CHECK(slurp(dir / "a.csv") == "device_id,x_hat,y_hat,nll,n_meas\n3,12.500000,40.000000,17.25,42\n");
  CHECK(slurp(dir / "b.csv") == "device_id,x_hat,y_hat,nll,n_meas,error_m\n3,12.500000,40.000000,17.25,42,1.500000\n");
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE

TEST_SUITE("envlearn") {

TEST_CASE("fit_channel: an empty class can take its law from a prior") {
  const CityMap open = uavfed::testing::open_map(30, 30, 10.0);
  const std::vector<DeviceSpec> anchors{{0, {15, 15}, 1.0, true}};
  const ChannelParams truth;
  const GroundTruthChannel gt(truth);
  Rng rng(8);
  std::vector<MeasurementRecord> los_only;
  for (int k = 0; k < 100; ++k) {
    const GridPos u{k % 30, (7 * k) % 30, 50.0};
    los_only.push_back({0, 0, u, 0, sample_link(gt, u, {15, 15, 0.0}, open, rng).gain_db});
  }
  ChannelParams prior;
  prior.alpha_nlos = -31.0;
  prior.beta_nlos = -51.0;
  ChannelFitOptions opt;
  opt.empty_class_prior = prior;
  const LearnedChannel ch = fit_channel(los_only, anchors, open, RadioConstants::from(truth), opt);
  CHECK(ch.nlos_model().fallback);
  CHECK(ch.nlos_model().alpha == -31.0);
  CHECK(ch.nlos_model().beta == -51.0);
  CHECK(ch.nlos_model().sigma == ch.los_model().sigma);
}

}  // TEST_SUITE
