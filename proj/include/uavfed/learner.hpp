#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "uavfed/env.hpp"
#include "uavfed/nn.hpp"

namespace uavfed {

enum class LearnerMode { Qmix, Iql };
const char* learner_mode_name(LearnerMode mode);

struct LearnerConfig {
  LearnerMode mode = LearnerMode::Qmix;
  double gamma = 0.99;
  int batch_size = 32;
  int buffer_capacity = 5000;
  int target_update_period = 200;  // in train steps
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  long epsilon_decay_steps = 50000;  // environment steps
  int hidden_dim = 64;
  int embed_dim = 32;
  int hypernet_hidden = 64;
  double learning_rate = 5e-4;
  double grad_clip_norm = 10.0;  // <= 0 disables clipping

  void validate() const;
  double epsilon_at(long env_steps) const;
};

// ---------------------------------------------------------------------------

/// Shared-parameter recurrent agent network: fc1 -> ReLU -> GRU -> fc2 (one Q per action).
/// Input is the observation, a one-hot of the previous action and a one-hot agent id.
struct AgentNet {
  nn::Linear fc1;
  nn::GruCell gru;
  nn::Linear fc2;
  int input_dim = 0;
  int hidden_dim = 0;

  static AgentNet create(nn::ParamVector& params, int input_dim, int hidden_dim);
};

struct AgentTrace {
  std::vector<nn::Tensor> fc1_out;  // post-ReLU
  nn::GruSequence seq;
  std::vector<nn::Tensor> q;        // rows x kNumActions per step
};

/// Runs the agent net over the first `steps` input batches from a zero hidden state.
/// Without `keep_cache` only Q-values are kept and the trace cannot be backpropagated.
AgentTrace agent_forward(const AgentNet& net, std::span<const double> params, const std::vector<nn::Tensor>& inputs,
                         std::size_t steps, bool keep_cache);
/// Backpropagates dL/dQ for every step into `grads`.
void agent_backward(const AgentNet& net, std::span<const double> params, const std::vector<nn::Tensor>& inputs,
                    const AgentTrace& trace, const std::vector<nn::Tensor>& dq, std::span<double> grads);

/// Monotonic mixer. W1 and W2 come from hypernetworks followed by an absolute value;
///   Q_tot = elu(q W1 + b1) . W2 + V(s)
struct MixerNet {
  nn::Linear hw1_a, hw1_b;  // state -> hyper hidden -> n_agents * embed
  nn::Linear hb1;           // state -> embed
  nn::Linear hw2_a, hw2_b;  // state -> hyper hidden -> embed
  nn::Linear v_a, v_b;      // state -> embed -> 1
  int n_agents = 0;
  int state_dim = 0;
  int embed_dim = 0;

  struct Cache {
    nn::Tensor s, q, h1, w1_raw, b1, h2, w2_raw, hv, pre;
  };

  static MixerNet create(nn::ParamVector& params, int n_agents, int state_dim, int embed_dim, int hyper_hidden);

  /// qs: N x n_agents, states: N x state_dim. Returns N x 1.
  void forward(std::span<const double> params, const nn::Tensor& qs, const nn::Tensor& states, nn::Tensor& qtot,
               Cache* cache) const;
  /// Accumulates parameter gradients; writes dL/dq (N x n_agents) into dqs.
  void backward(std::span<const double> params, const Cache& cache, const nn::Tensor& dqtot,
                std::span<double> grads, nn::Tensor& dqs) const;
};

// ---------------------------------------------------------------------------

/// One stored episode. Index t runs over transitions; states/obs/masks have one extra entry
/// for the state reached after the last transition.
struct Episode {
  int n_agents = 0;
  std::vector<std::vector<float>> states;                // [t]
  std::vector<std::vector<std::vector<float>>> obs;      // [t][agent]
  std::vector<std::vector<ActionMask>> masks;            // [t][agent]
  std::vector<std::vector<int>> actions;                 // [t][agent]
  std::vector<double> rewards;                           // [t]
  bool terminated = true;                                // last transition ends the episode

  int length() const { return static_cast<int>(rewards.size()); }
};

/// FIFO episode replay buffer.
class EpisodeBuffer {
 public:
  explicit EpisodeBuffer(std::size_t capacity);

  void add(Episode episode);
  /// Uniform sample of n distinct episodes.
  std::vector<const Episode*> sample(std::size_t n, Rng& rng) const;
  void clear() { episodes_.clear(); }

  std::size_t size() const { return episodes_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Episode& operator[](std::size_t i) const { return *episodes_[i]; }

 private:
  std::size_t capacity_;
  std::deque<std::shared_ptr<const Episode>> episodes_;
};

/// Padded, time-major view of a batch of episodes.
struct Batch {
  int size = 0;
  int n_agents = 0;
  int steps = 0;  // longest episode in the batch
  std::vector<nn::Tensor> inputs;       // steps + 1 entries, (size * n_agents) x input_dim
  nn::Tensor states;                    // (steps * size) x state_dim, row t * size + b
  nn::Tensor next_states;
  std::vector<int> actions;             // ((t * size + b) * n_agents + i)
  std::vector<ActionMask> next_masks;   // same indexing
  std::vector<double> rewards;          // t * size + b
  std::vector<double> valid;
  std::vector<double> bootstrap;        // 0 on terminal transitions and padding
};

Batch make_batch(const std::vector<const Episode*>& episodes, int n_agents, int obs_dim, int state_dim);

/// Greedy pick over the feasible set, lowest index on ties.
int masked_argmax(const double* q, const ActionMask& mask);
/// With probability epsilon a uniform feasible action, else masked_argmax. No random draw
/// is taken when epsilon is 0.
Action select_action(const double* q, const ActionMask& mask, double epsilon, Rng& rng);

// ---------------------------------------------------------------------------

/// QMIX or IQL learner: online and target parameters, Adam state and schedules.
class QLearner {
 public:
  QLearner(LearnerConfig config, int n_agents, int obs_dim, int state_dim, std::uint64_t seed);

  const LearnerConfig& config() const { return config_; }
  int n_agents() const { return n_agents_; }
  int obs_dim() const { return obs_dim_; }
  int state_dim() const { return state_dim_; }
  int input_dim() const { return obs_dim_ + kNumActions + n_agents_; }
  const AgentNet& agent_net() const { return agent_; }
  const MixerNet* mixer() const { return has_mixer() ? &mixer_ : nullptr; }
  bool has_mixer() const { return config_.mode == LearnerMode::Qmix; }

  const nn::ParamVector& params() const { return params_; }
  nn::ParamVector& params() { return params_; }
  /// Replaces online parameters; the layout must match.
  void set_params(const nn::ParamVector& params);
  const nn::ParamVector& target_params() const { return target_; }
  void sync_target() { target_ = params_; }
  nn::AdamState& optimizer() { return adam_; }

  // Acting -----------------------------------------------------------------
  struct ActState {
    nn::Tensor hidden;             // n_agents x hidden_dim
    std::vector<int> prev_actions; // -1 before the first action
  };
  ActState initial_act_state() const;
  /// Q-values for every agent (n_agents x kNumActions); advances the recurrent state.
  nn::Tensor q_values(ActState& state, const std::vector<std::vector<double>>& obs) const;
  std::vector<Action> act(ActState& state, const std::vector<std::vector<double>>& obs,
                          const std::vector<ActionMask>& masks, double epsilon, Rng& rng) const;

  long env_steps() const { return env_steps_; }
  void add_env_steps(long n) { env_steps_ += n; }
  double epsilon() const { return config_.epsilon_at(env_steps_); }

  // Training ---------------------------------------------------------------
  /// Summed squared TD error over the batch; fills `grad` when non-null. Target values use
  /// the current target parameters.
  double compute_loss(const nn::ParamVector& params, const Batch& batch, nn::ParamVector* grad) const;
  double compute_loss(const nn::ParamVector& params, const std::vector<const Episode*>& episodes,
                      nn::ParamVector* grad) const;
  /// Samples B episodes, takes one Adam step and syncs the target every N_target calls.
  double train_step(const EpisodeBuffer& buffer, Rng& rng);
  long train_steps() const { return train_steps_; }

  // Checkpoints ------------------------------------------------------------
  /// Hash of everything that determines the parameter layout.
  std::uint64_t fingerprint() const;
  void save(const std::filesystem::path& path) const;
  /// Loads online parameters (and syncs the target); refuses a fingerprint mismatch.
  void load(const std::filesystem::path& path);

 private:
  void fill_input_row(double* row, int agent, const std::vector<double>& obs, int prev_action) const;

  LearnerConfig config_;
  int n_agents_;
  int obs_dim_;
  int state_dim_;
  nn::ParamVector params_;
  nn::ParamVector target_;
  AgentNet agent_;
  MixerNet mixer_;
  nn::AdamState adam_;
  long env_steps_ = 0;
  long train_steps_ = 0;
};

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 14695981039346656037ULL);

// ---------------------------------------------------------------------------

struct EpisodeResult {
  Episode episode;
  double collected = 0.0;
  double collection_ratio = 0.0;
  std::vector<TrajectoryStep> trajectory;
  std::vector<MeasurementRecord> measurements;
};

/// Plays one episode with the learner's policy. Stored rewards are divided by the env's
/// total initial data, so an episode's undiscounted return is its collection ratio.
/// Does not touch the learner's env-step counter.
EpisodeResult run_episode(const QLearner& learner, Env& env, double epsilon, Rng& rng);

/// Greedy (epsilon = 0) episode.
inline EpisodeResult greedy_rollout(const QLearner& learner, Env& env, Rng& rng) {
  return run_episode(learner, env, 0.0, rng);
}

/// Uniform random feasible policy; returns the collection ratio.
EpisodeResult random_rollout(Env& env, Rng& rng);

}  // namespace uavfed
