#pragma once

#include <random>

#include "uavfed/world.hpp"

namespace uavfed {

using Rng = std::mt19937_64;

/// Segmented log-distance air-to-ground channel. Defaults are workbench values,
/// not measured propagation constants.
struct ChannelParams {
  double alpha_los = -22.0;   // dB per decade
  double beta_los = -42.0;    // dB at d0 = 1 m
  double sigma_los = 2.0;     // dB
  double alpha_nlos = -36.0;
  double beta_nlos = -48.0;
  double sigma_nlos = 5.0;
  double tx_power_w = 1.0;
  double noise_power_w = 1e-9;  // P / noise = 90 dB
  double snr_threshold = 0.05;  // linear

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

struct LinkSample {
  double gain_db = 0.0;
  bool los = false;
  double snr = 0.0;
  double rate = 0.0;  // bit/s/Hz
};

/// beta + alpha * log10(d) + shadowing for the class selected by `los`; d clamped to 1 m.
double gain_db(const ChannelParams& params, double distance_m, bool los, double shadowing_db);

double snr_from_gain(double gain_db, double tx_power_w, double noise_power_w);
double rate_from_snr(double snr);

/// Mean gain plus shadowing law for a link class. Implemented by the ground-truth
/// channel and by channels learned from measurements.
class LinkModel {
 public:
  virtual ~LinkModel() = default;

  /// Mean gain in dB. `elevation_rad` is asin(dh / d).
  virtual double mean_gain_db(double distance_m, double elevation_rad, bool los) const = 0;
  virtual double shadowing_sigma_db(bool los) const = 0;

  virtual double tx_power_w() const = 0;
  virtual double noise_power_w() const = 0;
  virtual double snr_threshold() const = 0;
};

class GroundTruthChannel final : public LinkModel {
 public:
  explicit GroundTruthChannel(ChannelParams params);

  const ChannelParams& params() const { return params_; }

  double mean_gain_db(double distance_m, double elevation_rad, bool los) const override;
  double shadowing_sigma_db(bool los) const override;
  double tx_power_w() const override { return params_.tx_power_w; }
  double noise_power_w() const override { return params_.noise_power_w; }
  double snr_threshold() const override { return params_.snr_threshold; }

 private:
  ChannelParams params_;
};

/// Draws one link realization between two grid positions: LoS from the map raycast,
/// shadowing ~ N(0, sigma^2) from `rng` (always exactly one normal draw).
LinkSample sample_link(const LinkModel& model, const GridPos& a, const GridPos& b,
                       const CityMap& map, Rng& rng);
LinkSample sample_link(const ChannelParams& params, const GridPos& uav, const GridPos& device,
                       const CityMap& map, Rng& rng);

/// Same as sample_link with a precomputed LoS flag.
LinkSample sample_link_with_los(const LinkModel& model, const Vec3& a, const Vec3& b, bool los,
                                Rng& rng);

bool reachable(const LinkSample& sample, double snr_threshold);
inline bool reachable(const LinkSample& sample, const ChannelParams& params) {
  return reachable(sample, params.snr_threshold);
}

/// asin(|dz| / d), 0 for coincident points.
double elevation_angle(const Vec3& a, const Vec3& b);

}  // namespace uavfed
