#include "uavfed/channel.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "uavfed/error.hpp"

namespace uavfed {

void ChannelParams::validate() const {
  auto finite = [](double v, const char* name) {
    if (!std::isfinite(v)) throw ValidationError(std::string("channel.") + name + ": must be finite");
  };
  finite(alpha_los, "alpha_los");
  finite(beta_los, "beta_los");
  finite(alpha_nlos, "alpha_nlos");
  finite(beta_nlos, "beta_nlos");
  if (!(sigma_los >= 0.0)) throw ValidationError("channel.sigma_los: must be >= 0");
  if (!(sigma_nlos >= 0.0)) throw ValidationError("channel.sigma_nlos: must be >= 0");
  if (!(tx_power_w > 0.0)) throw ValidationError("channel.tx_power_w: must be > 0");
  if (!(noise_power_w > 0.0)) throw ValidationError("channel.noise_power_w: must be > 0");
  if (!(snr_threshold >= 0.0)) throw ValidationError("channel.snr_threshold: must be >= 0");
}

double gain_db(const ChannelParams& params, double distance_m, bool los, double shadowing_db) {
  const double d = std::max(distance_m, 1.0);
  const double alpha = los ? params.alpha_los : params.alpha_nlos;
  const double beta = los ? params.beta_los : params.beta_nlos;
  return beta + alpha * std::log10(d) + shadowing_db;
}

double snr_from_gain(double gain, double tx_power_w, double noise_power_w) {
  return tx_power_w * std::pow(10.0, 0.1 * gain) / noise_power_w;
}

double rate_from_snr(double snr) { return std::log2(1.0 + snr); }

GroundTruthChannel::GroundTruthChannel(ChannelParams params) : params_(std::move(params)) {
  params_.validate();
}

double GroundTruthChannel::mean_gain_db(double distance_m, double, bool los) const {
  return gain_db(params_, distance_m, los, 0.0);
}

double GroundTruthChannel::shadowing_sigma_db(bool los) const {
  return los ? params_.sigma_los : params_.sigma_nlos;
}

double elevation_angle(const Vec3& a, const Vec3& b) {
  const double d = distance(a, b);
  if (d <= 0.0) return 0.0;
  return std::asin(std::clamp(std::abs(a.z - b.z) / d, 0.0, 1.0));
}

LinkSample sample_link_with_los(const LinkModel& model, const Vec3& a, const Vec3& b, bool los,
                                Rng& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  const double shadowing = unit(rng) * model.shadowing_sigma_db(los);
  LinkSample s;
  s.los = los;
  s.gain_db = model.mean_gain_db(distance(a, b), elevation_angle(a, b), los) + shadowing;
  s.snr = snr_from_gain(s.gain_db, model.tx_power_w(), model.noise_power_w());
  s.rate = rate_from_snr(s.snr);
  return s;
}

LinkSample sample_link(const LinkModel& model, const GridPos& a, const GridPos& b,
                       const CityMap& map, Rng& rng) {
  return sample_link_with_los(model, map.center(a), map.center(b), is_los(map, a, b), rng);
}

LinkSample sample_link(const ChannelParams& params, const GridPos& uav, const GridPos& device,
                       const CityMap& map, Rng& rng) {
  return sample_link(GroundTruthChannel(params), uav, device, map, rng);
}

bool reachable(const LinkSample& sample, double snr_threshold) { return sample.snr >= snr_threshold; }

}  // namespace uavfed
