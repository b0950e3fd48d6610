#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uavfed/envlearn.hpp"
#include "uavfed/learner.hpp"
#include "uavfed/nn.hpp"

namespace uavfed {

/// Elementwise mean of parameter vectors with identical layouts. Each coordinate is
/// summed in sorted order relative to its minimum, so the result does not depend on the
/// input order and the mean of identical vectors is exact.
nn::ParamVector aggregate(const std::vector<const nn::ParamVector*>& params);
nn::ParamVector aggregate(const std::vector<nn::ParamVector>& params);

/// Independent stream seed for (base, tag, index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index);

struct FedConfig {
  int n_learners = 3;        // I
  int sync_period = 50;      // N_freq, local episodes between aggregations
  int sim_episodes = 1000;   // N, simulated episodes per learner and outer iteration
  int real_episodes = 30;    // E_max
  std::uint64_t seed = 0;
  /// Per-learner stream seeds; derived from `seed` when empty.
  std::vector<std::uint64_t> learner_seeds;
  double real_epsilon = 0.0;
  bool reset_buffers = false;
  bool concurrent = true;
  /// Channel used until the first successful fit.
  ChannelParams prior_channel = default_prior_channel();
  ChannelFitOptions fit;
  PsoConfig pso;  // its seed is replaced per iteration and device
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints

  static ChannelParams default_prior_channel();
  void validate() const;
};

struct IterationMetrics {
  int iteration = 0;
  long real_world_episodes = 0;
  long simulated_episodes = 0;  // per learner, cumulative
  double collection_ratio = 0.0;
  std::optional<double> mean_loss;  // absent when no train step ran
  std::optional<double> mean_localization_error_m;
};

/// State of one Model-aided FedQMIX run: the global policy, per-learner learners, buffers,
/// simulated envs and rng streams, the measurement log and current estimates.
class FedRun {
 public:
  FedRun(EnvConfig real, LearnerConfig learner, FedConfig config);

  /// Real-world greedy episode with the global policy, environment learning on all
  /// measurements so far, then N simulated episodes per learner with synchronous
  /// aggregation every N_freq episodes and once at the end.
  const IterationMetrics& run_outer_iteration();

  const nn::ParamVector& global_params() const { return policy_->params(); }
  /// Learner holding the global parameters; used for real-world rollouts and checkpoints.
  const QLearner& policy() const { return *policy_; }
  const QLearner& learner(int i) const { return *learners_[i].learner; }
  const EpisodeBuffer& buffer(int i) const { return learners_[i].buffer; }
  int n_learners() const { return static_cast<int>(learners_.size()); }

  int iteration() const { return iteration_; }
  long real_world_episodes() const { return real_world_episodes_; }
  long simulated_episodes() const { return simulated_episodes_; }
  const std::vector<IterationMetrics>& metrics() const { return metrics_; }
  const MeasurementSet& measurements() const { return measurements_; }
  const std::map<int, LocalizationResult>& estimates() const { return estimates_; }
  const LearnedChannel& channel() const { return *channel_; }
  const EnvConfig& real_config() const { return real_; }
  const FedConfig& config() const { return config_; }
  const std::vector<TrajectoryStep>& last_real_trajectory() const { return last_trajectory_; }

  /// Real env config whose observations use the current device estimates.
  EnvConfig believed_real_config() const;

 private:
  struct LearnerSlot {
    std::unique_ptr<QLearner> learner;
    EpisodeBuffer buffer;
    std::unique_ptr<Env> env;
    Rng rng;
    double loss_sum = 0.0;
    long loss_count = 0;
  };

  void learn_environment();
  void train_round(int episodes);
  void broadcast(const nn::ParamVector& global);

  EnvConfig real_;
  LearnerConfig learner_config_;
  FedConfig config_;
  std::unique_ptr<QLearner> policy_;
  std::vector<LearnerSlot> learners_;
  Rng real_rng_;
  MeasurementSet measurements_;
  std::shared_ptr<const LearnedChannel> channel_;
  std::map<int, LocalizationResult> estimates_;
  std::vector<IterationMetrics> metrics_;
  std::vector<TrajectoryStep> last_trajectory_;
  int iteration_ = 0;
  long real_world_episodes_ = 0;
  long simulated_episodes_ = 0;
};

struct RunResult {
  nn::ParamVector params;
  std::vector<IterationMetrics> metrics;
  std::map<int, LocalizationResult> estimates;
};

/// E_max outer iterations of Model-aided FedQMIX.
RunResult run_algorithm1(const EnvConfig& real, const LearnerConfig& learner, const FedConfig& config);

enum class Baseline { QmixReal, IqlReal, ModelAidedQmix };
const char* baseline_name(Baseline b);

struct BaselineConfig {
  int episodes = 1000;  // real-world training episodes for the *-real baselines
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;
  int checkpoint_period = 0;  // episodes; 0 writes only the final checkpoint
};

/// QMIX-real and IQL-real train directly in the ground-truth env, one metrics row per
/// episode; model-aided QMIX is Algorithm 1 with a single learner.
RunResult run_baseline(Baseline mode, const EnvConfig& real, const LearnerConfig& learner,
                       const FedConfig& fed, const BaselineConfig& baseline);

/// Mean distance between estimated and true positions of the unknown devices.
std::optional<double> mean_localization_error(const EnvConfig& real, const std::map<int, LocalizationResult>& est);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<IterationMetrics>& rows);
std::vector<IterationMetrics> read_metrics_csv(const std::filesystem::path& path);

}  // namespace uavfed
