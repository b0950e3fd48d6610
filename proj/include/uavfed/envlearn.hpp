#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "uavfed/channel.hpp"
#include "uavfed/env.hpp"
#include "uavfed/nn.hpp"
#include "uavfed/world.hpp"

namespace uavfed {

/// Not enough measurements for a fit or a localization.
class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Append-only record of every measurement gathered in the real world.
struct MeasurementSet {
  std::vector<MeasurementRecord> records;

  void append(const std::vector<MeasurementRecord>& more) { records.insert(records.end(), more.begin(), more.end()); }
  std::vector<MeasurementRecord> for_device(int device_id) const;
  std::size_t size() const { return records.size(); }
};

/// Hardware constants shared by the real and learned channels (not learned).
struct RadioConstants {
  double tx_power_w = 1.0;
  double noise_power_w = 1e-9;
  double snr_threshold = 0.05;

  static RadioConstants from(const ChannelParams& p) { return {p.tx_power_w, p.noise_power_w, p.snr_threshold}; }
};

/// Small regression network for the mean gain: (log10 d, elevation, LoS flag) -> dB.
struct PsiNetwork {
  nn::ParamVector params;
  nn::Linear hidden;
  nn::Linear out;
  double y_mean = 0.0;
  double y_scale = 1.0;

  double predict(double distance_m, double elevation_rad, bool los) const;
};

enum class PsiKind { LogLinear, Network };

/// Channel reconstructed from measurements.
class LearnedChannel final : public LinkModel {
 public:
  struct ClassModel {
    double alpha = 0.0;
    double beta = 0.0;
    double sigma = 1.0;
    std::size_t samples = 0;
    /// Parameters were borrowed rather than fitted on this class's own data.
    bool fallback = false;
  };

  LearnedChannel(ClassModel los, ClassModel nlos, RadioConstants radio);
  /// Log-linear channel equal to the given parameters (a perfectly learned channel).
  static LearnedChannel from_params(const ChannelParams& params);

  const ClassModel& los_model() const { return los_; }
  const ClassModel& nlos_model() const { return nlos_; }
  const RadioConstants& radio() const { return radio_; }
  PsiKind kind() const { return network_ ? PsiKind::Network : PsiKind::LogLinear; }
  void set_network(std::shared_ptr<const PsiNetwork> net) { network_ = std::move(net); }
  bool any_fallback() const { return los_.fallback || nlos_.fallback; }

  double mean_gain_db(double distance_m, double elevation_rad, bool los) const override;
  double shadowing_sigma_db(bool los) const override { return los ? los_.sigma : nlos_.sigma; }
  double tx_power_w() const override { return radio_.tx_power_w; }
  double noise_power_w() const override { return radio_.noise_power_w; }
  double snr_threshold() const override { return radio_.snr_threshold; }

 private:
  ClassModel los_;
  ClassModel nlos_;
  RadioConstants radio_;
  std::shared_ptr<const PsiNetwork> network_;
};

struct ChannelFitOptions {
  PsiKind kind = PsiKind::LogLinear;
  std::size_t min_samples = 50;
  int network_hidden = 32;
  int network_epochs = 1500;
  double network_learning_rate = 1e-2;
  std::uint64_t seed = 0;
  /// Path-loss law for a class without usable samples. Without it the class copies the
  /// other class's fit. Its shadowing always comes from the other class.
  std::optional<ChannelParams> empty_class_prior;
};

/// Fits the channel on measurements of anchor devices (records of other devices are
/// ignored). LoS labels come from the map. A class with fewer than two usable samples
/// is flagged and borrows its shadowing from the other class.
LearnedChannel fit_channel(const std::vector<MeasurementRecord>& records, const std::vector<DeviceSpec>& anchors,
                           const CityMap& map, const RadioConstants& radio, const ChannelFitOptions& options = {});

// ---------------------------------------------------------------------------

/// Negative log-likelihood of one device's measurements for a candidate ground position.
double nll(const std::vector<MeasurementRecord>& records, const Vec3& candidate, const LinkModel& channel,
           const CityMap& map);

/// Cached evaluator of `nll` for many candidates. LoS for a candidate is that of the cell
/// containing it, cached per (measurement position, cell).
class NllEvaluator {
 public:
  NllEvaluator(const std::vector<MeasurementRecord>& records, const LinkModel& channel, const CityMap& map);

  double operator()(double x, double y);
  std::size_t measurement_count() const { return records_.size(); }

 private:
  bool los(std::size_t position, Cell cell);

  std::vector<MeasurementRecord> records_;
  const LinkModel& channel_;
  const CityMap& map_;
  std::vector<GridPos> positions_;
  std::vector<Vec3> centers_;
  std::vector<std::size_t> position_of_;
  std::vector<std::vector<signed char>> los_cache_;
};

struct PsoConfig {
  int particles = 50;
  int iterations = 100;
  double inertia = 0.72;
  double cognitive = 1.49;
  double social = 1.49;
  double velocity_clamp = 0.2;  // fraction of the search range per axis
  std::uint64_t seed = 0;
  std::size_t min_measurements = 10;

  void validate() const;
};

struct LocalizationResult {
  int device_id = 0;
  Vec3 position;
  double nll = 0.0;
  std::size_t measurements = 0;
  /// Too few measurements: the position is the previous estimate or a random guess.
  bool low_confidence = false;
};

/// Global-best PSO over the map extent minimising `nll`. A warm start replaces the first
/// particle. With too few measurements returns `warm_start` (or a uniform random guess)
/// flagged as low confidence.
LocalizationResult localize(int device_id, const std::vector<MeasurementRecord>& all_records,
                            const LinkModel& channel, const CityMap& map, const PsoConfig& pso,
                            std::optional<Vec3> warm_start = std::nullopt);

/// Exhaustive search over all cell centres; the reference optimum for PSO.
LocalizationResult grid_search(int device_id, const std::vector<MeasurementRecord>& all_records,
                               const LinkModel& channel, const CityMap& map);

// ---------------------------------------------------------------------------

/// Simulated twin of a real env config: unknown devices sit at their estimated cells and
/// links follow the learned channel. Anchors, data volumes, UAVs and slot length are copied.
EnvConfig build_simulated_env(const EnvConfig& real, const std::map<int, LocalizationResult>& estimates,
                              std::shared_ptr<const LinkModel> channel);

struct LocalizationReportRow {
  LocalizationResult result;
  std::optional<double> error_m;  // evaluation mode only
};

void write_localization_report(const std::filesystem::path& path, const std::vector<LocalizationReportRow>& rows);

}  // namespace uavfed
