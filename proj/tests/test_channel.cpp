#include <cmath>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "uavfed/channel.hpp"
#include "uavfed/error.hpp"

using namespace uavfed;

TEST_SUITE("channel") {

TEST_CASE("gain_db: reference distance returns beta") {
  const ChannelParams p;
  CHECK(gain_db(p, 1.0, true, 0.0) == p.beta_los);
  CHECK(gain_db(p, 1.0, false, 0.0) == p.beta_nlos);
  // Below d0 the distance is clamped.
  CHECK(gain_db(p, 0.2, true, 0.0) == p.beta_los);
}

TEST_CASE("gain_db: closed form at 100 m and additive shadowing") {
  const ChannelParams p;  // alpha_los = -22, beta_los = -42
  CHECK(gain_db(p, 100.0, true, 0.0) == doctest::Approx(-86.0).epsilon(1e-15));
  CHECK(gain_db(p, 100.0, true, 3.0) == doctest::Approx(-83.0).epsilon(1e-15));
}

TEST_CASE("sample_link: unit SNR gives one bit per channel use") {
  const CityMap m = uavfed::testing::open_map(5, 5);
  ChannelParams p = uavfed::testing::noiseless();
  const GridPos uav{0, 0, 60.0};
  const GridPos dev{3, 4, 0.0};
  const double g = gain_db(p, distance(m.center(uav), m.center(dev)), true, 0.0);
  p.noise_power_w = p.tx_power_w * std::pow(10.0, 0.1 * g);
  Rng rng(1);
  const LinkSample s = sample_link(p, uav, dev, m, rng);
  CHECK(s.los);
  CHECK(s.gain_db == g);
  CHECK(s.snr == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(s.rate == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("sample_link: zero shadowing variance is deterministic") {
  const CityMap m = uavfed::testing::open_map(5, 5);
  const ChannelParams p = uavfed::testing::noiseless();
  Rng rng(99);
  for (int i = 0; i < 10; ++i) {
    const LinkSample s = sample_link(p, {1, 1, 55.0}, {4, 2, 0.0}, m, rng);
    CHECK(s.gain_db == gain_db(p, distance(m.center({1, 1, 55.0}), m.center({4, 2, 0.0})), true, 0.0));
  }
}

TEST_CASE("sample_link: shadowing std matches sigma_los (Monte Carlo)") {
  const CityMap m = uavfed::testing::open_map(5, 5);
  const ChannelParams p;  // sigma_los = 2
  Rng rng(2024);
  const GridPos uav{0, 0, 60.0}, dev{2, 3, 0.0};
  const double mean = gain_db(p, distance(m.center(uav), m.center(dev)), true, 0.0);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = sample_link(p, uav, dev, m, rng).gain_db - mean;
    sum += r;
    sum2 += r * r;
  }
  const double var = sum2 / n - (sum / n) * (sum / n);
  CHECK(std::sqrt(var) >= 1.9);
  CHECK(std::sqrt(var) <= 2.1);
}

TEST_CASE("reachable: threshold is inclusive") {
  LinkSample s;
  s.snr = 0.05;
  CHECK(reachable(s, 0.05));
  s.snr = 0.0;
  CHECK_FALSE(reachable(s, 0.05));
  CHECK(reachable(s, 0.0));
}

TEST_CASE("properties: monotone gain and rate; LoS dominates NLoS under defaults") {
  const ChannelParams p;
  double prev = gain_db(p, 1.0, true, 1.5);
  for (double d = 2.0; d < 5000.0; d *= 1.3) {
    const double g = gain_db(p, d, true, 1.5);
    CHECK(g < prev);
    prev = g;
    CHECK(gain_db(p, d, true, 0.0) >= gain_db(p, d, false, 0.0));
  }
  CHECK(rate_from_snr(0.0) == 0.0);
  double prev_rate = 0.0;
  for (double snr = 1e-3; snr < 1e6; snr *= 2.0) {
    CHECK(rate_from_snr(snr) > prev_rate);
    prev_rate = rate_from_snr(snr);
  }
}

TEST_CASE("params: validation names the field") {
  ChannelParams p;
  p.sigma_nlos = -1.0;
  try {
    p.validate();
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("sigma_nlos") != std::string::npos);
  }
  p = {};
  p.noise_power_w = 0.0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
}

}  // TEST_SUITE
