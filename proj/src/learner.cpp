#include "uavfed/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "uavfed/error.hpp"

namespace uavfed {

using nn::Tensor;

const char* learner_mode_name(LearnerMode mode) { return mode == LearnerMode::Qmix ? "qmix" : "iql"; }

void LearnerConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValidationError("learner." + field + ": " + why);
  };
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma", "must lie in [0, 1]");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (buffer_capacity < batch_size) fail("buffer_capacity", "must be >= batch_size");
  if (target_update_period < 1) fail("target_update_period", "must be >= 1");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0)) fail("epsilon_start", "must lie in [0, 1]");
  if (!(epsilon_end >= 0.0 && epsilon_end <= 1.0)) fail("epsilon_end", "must lie in [0, 1]");
  if (epsilon_decay_steps < 0) fail("epsilon_decay_steps", "must be >= 0");
  if (hidden_dim < 1) fail("hidden_dim", "must be >= 1");
  if (embed_dim < 1) fail("embed_dim", "must be >= 1");
  if (hypernet_hidden < 1) fail("hypernet_hidden", "must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate", "must be > 0");
}

double LearnerConfig::epsilon_at(long env_steps) const {
  if (epsilon_decay_steps <= 0 || env_steps >= epsilon_decay_steps) return epsilon_end;
  const double frac = static_cast<double>(env_steps) / static_cast<double>(epsilon_decay_steps);
  return epsilon_start + (epsilon_end - epsilon_start) * frac;
}

// ---------------------------------------------------------------------------

AgentNet AgentNet::create(nn::ParamVector& params, int input_dim, int hidden_dim) {
  AgentNet net;
  net.input_dim = input_dim;
  net.hidden_dim = hidden_dim;
  net.fc1 = nn::Linear::create(params, "agent.fc1", input_dim, hidden_dim);
  net.gru = nn::GruCell::create(params, "agent.gru", hidden_dim, hidden_dim);
  net.fc2 = nn::Linear::create(params, "agent.fc2", hidden_dim, kNumActions);
  return net;
}

AgentTrace agent_forward(const AgentNet& net, std::span<const double> params, const std::vector<Tensor>& inputs,
                         std::size_t steps, bool keep_cache) {
  if (steps > inputs.size()) throw std::invalid_argument("agent_forward: not enough input steps");
  AgentTrace tr;
  tr.fc1_out.resize(steps);
  tr.q.resize(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    net.fc1.forward(params, inputs[t], tr.fc1_out[t]);
    nn::relu_inplace(tr.fc1_out[t]);
  }
  const std::size_t rows = steps ? inputs[0].rows() : 0;
  const Tensor h0 = Tensor::matrix(rows, net.hidden_dim);
  if (keep_cache) {
    tr.seq = nn::gru_forward_sequence(net.gru, params, tr.fc1_out, h0);
  } else {
    tr.seq.hidden.resize(steps);
    const Tensor* h = &h0;
    for (std::size_t t = 0; t < steps; ++t) {
      net.gru.forward(params, tr.fc1_out[t], *h, tr.seq.hidden[t], nullptr);
      h = &tr.seq.hidden[t];
    }
    tr.fc1_out.clear();
  }
  for (std::size_t t = 0; t < steps; ++t) net.fc2.forward(params, tr.seq.hidden[t], tr.q[t]);
  return tr;
}

void agent_backward(const AgentNet& net, std::span<const double> params, const std::vector<Tensor>& inputs,
                    const AgentTrace& trace, const std::vector<Tensor>& dq, std::span<double> grads) {
  const std::size_t steps = trace.q.size();
  if (trace.seq.caches.size() != steps || dq.size() != steps) {
    throw std::invalid_argument("agent_backward: trace was not kept for backpropagation");
  }
  std::vector<Tensor> dh(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    dh[t] = Tensor::matrix(trace.q[t].rows(), net.hidden_dim);
    net.fc2.backward(params, trace.seq.hidden[t], dq[t], grads, &dh[t]);
  }
  std::vector<Tensor> da;
  nn::gru_backward_sequence(net.gru, params, trace.seq, dh, grads, &da);
  for (std::size_t t = 0; t < steps; ++t) {
    nn::relu_backward_inplace(trace.fc1_out[t], da[t]);
    net.fc1.backward(params, inputs[t], da[t], grads, nullptr);
  }
}

// ---------------------------------------------------------------------------

MixerNet MixerNet::create(nn::ParamVector& params, int n_agents, int state_dim, int embed_dim, int hyper_hidden) {
  MixerNet m;
  m.n_agents = n_agents;
  m.state_dim = state_dim;
  m.embed_dim = embed_dim;
  m.hw1_a = nn::Linear::create(params, "mixer.hyper_w1.0", state_dim, hyper_hidden);
  m.hw1_b = nn::Linear::create(params, "mixer.hyper_w1.1", hyper_hidden, n_agents * embed_dim);
  m.hb1 = nn::Linear::create(params, "mixer.hyper_b1", state_dim, embed_dim);
  m.hw2_a = nn::Linear::create(params, "mixer.hyper_w2.0", state_dim, hyper_hidden);
  m.hw2_b = nn::Linear::create(params, "mixer.hyper_w2.1", hyper_hidden, embed_dim);
  m.v_a = nn::Linear::create(params, "mixer.v.0", state_dim, embed_dim);
  m.v_b = nn::Linear::create(params, "mixer.v.1", embed_dim, 1);
  return m;
}

void MixerNet::forward(std::span<const double> params, const Tensor& qs, const Tensor& states, Tensor& qtot,
                       Cache* cache) const {
  if (static_cast<int>(qs.cols()) != n_agents || qs.rows() != states.rows()) {
    throw std::invalid_argument("MixerNet::forward: shape mismatch");
  }
  const std::size_t n = qs.rows();
  const int E = embed_dim, I = n_agents;
  Cache local;
  Cache& c = cache ? *cache : local;
  hw1_a.forward(params, states, c.h1);
  nn::relu_inplace(c.h1);
  hw1_b.forward(params, c.h1, c.w1_raw);
  hb1.forward(params, states, c.b1);
  hw2_a.forward(params, states, c.h2);
  nn::relu_inplace(c.h2);
  hw2_b.forward(params, c.h2, c.w2_raw);
  v_a.forward(params, states, c.hv);
  nn::relu_inplace(c.hv);
  v_b.forward(params, c.hv, qtot);  // starts as V(s)
  c.pre.reset(n, E);
  for (std::size_t r = 0; r < n; ++r) {
    const double* q = qs.row(r);
    const double* w1 = c.w1_raw.row(r);
    const double* w2 = c.w2_raw.row(r);
    double* pre = c.pre.row(r);
    std::copy_n(c.b1.row(r), E, pre);
    for (int i = 0; i < I; ++i) {
      for (int e = 0; e < E; ++e) pre[e] += q[i] * std::abs(w1[i * E + e]);
    }
    double acc = 0.0;
    for (int e = 0; e < E; ++e) acc += nn::elu(pre[e]) * std::abs(w2[e]);
    qtot(r, 0) += acc;
  }
  if (cache) {
    c.s = states;
    c.q = qs;
  }
}

namespace {
inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
}  // namespace

void MixerNet::backward(std::span<const double> params, const Cache& c, const Tensor& dqtot,
                        std::span<double> grads, Tensor& dqs) const {
  const std::size_t n = c.q.rows();
  const int E = embed_dim, I = n_agents;
  dqs.reset(n, I);
  Tensor dw1 = Tensor::matrix(n, static_cast<std::size_t>(I) * E);
  Tensor db1 = Tensor::matrix(n, E);
  Tensor dw2 = Tensor::matrix(n, E);
  for (std::size_t r = 0; r < n; ++r) {
    const double g = dqtot(r, 0);
    if (g == 0.0) continue;
    const double* q = c.q.row(r);
    const double* w1 = c.w1_raw.row(r);
    const double* w2 = c.w2_raw.row(r);
    const double* pre = c.pre.row(r);
    for (int e = 0; e < E; ++e) {
      dw2(r, e) = g * nn::elu(pre[e]) * sign(w2[e]);
      const double dpre = g * std::abs(w2[e]) * nn::elu_grad(pre[e]);
      db1(r, e) = dpre;
      for (int i = 0; i < I; ++i) {
        dqs(r, i) += dpre * std::abs(w1[i * E + e]);
        dw1(r, i * E + e) = dpre * q[i] * sign(w1[i * E + e]);
      }
    }
  }
  // V(s)
  Tensor dhv = Tensor::matrix(n, E);
  v_b.backward(params, c.hv, dqtot, grads, &dhv);
  nn::relu_backward_inplace(c.hv, dhv);
  v_a.backward(params, c.s, dhv, grads, nullptr);
  // W2
  Tensor dh2 = Tensor::matrix(n, c.h2.cols());
  hw2_b.backward(params, c.h2, dw2, grads, &dh2);
  nn::relu_backward_inplace(c.h2, dh2);
  hw2_a.backward(params, c.s, dh2, grads, nullptr);
  // b1, W1
  hb1.backward(params, c.s, db1, grads, nullptr);
  Tensor dh1 = Tensor::matrix(n, c.h1.cols());
  hw1_b.backward(params, c.h1, dw1, grads, &dh1);
  nn::relu_backward_inplace(c.h1, dh1);
  hw1_a.backward(params, c.s, dh1, grads, nullptr);
}

// ---------------------------------------------------------------------------

EpisodeBuffer::EpisodeBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("EpisodeBuffer: capacity must be positive");
}

void EpisodeBuffer::add(Episode episode) {
  if (episodes_.size() == capacity_) episodes_.pop_front();
  episodes_.push_back(std::make_shared<const Episode>(std::move(episode)));
}

std::vector<const Episode*> EpisodeBuffer::sample(std::size_t n, Rng& rng) const {
  if (n > episodes_.size()) throw std::logic_error("EpisodeBuffer::sample: not enough episodes");
  // Partial Fisher-Yates over indices.
  std::vector<std::size_t> idx(episodes_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<const Episode*> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
    std::swap(idx[k], idx[pick(rng)]);
    out.push_back(episodes_[idx[k]].get());
  }
  return out;
}

Batch make_batch(const std::vector<const Episode*>& episodes, int n_agents, int obs_dim, int state_dim) {
  Batch b;
  b.size = static_cast<int>(episodes.size());
  b.n_agents = n_agents;
  for (const Episode* ep : episodes) {
    if (ep->n_agents != n_agents) throw std::invalid_argument("make_batch: agent count mismatch");
    b.steps = std::max(b.steps, ep->length());
  }
  const int B = b.size, I = n_agents, T = b.steps;
  const int in_dim = obs_dim + kNumActions + I;
  b.inputs.assign(T + 1, Tensor::matrix(static_cast<std::size_t>(B) * I, in_dim));
  b.states = Tensor::matrix(static_cast<std::size_t>(T) * B, state_dim);
  b.next_states = Tensor::matrix(static_cast<std::size_t>(T) * B, state_dim);
  ActionMask all{};
  all.fill(true);
  b.actions.assign(static_cast<std::size_t>(T) * B * I, 0);
  b.next_masks.assign(static_cast<std::size_t>(T) * B * I, all);
  b.rewards.assign(static_cast<std::size_t>(T) * B, 0.0);
  b.valid.assign(b.rewards.size(), 0.0);
  b.bootstrap.assign(b.rewards.size(), 0.0);

  for (int e = 0; e < B; ++e) {
    const Episode& ep = *episodes[e];
    const int len = ep.length();
    for (int t = 0; t <= len; ++t) {
      for (int i = 0; i < I; ++i) {
        double* row = b.inputs[t].row(static_cast<std::size_t>(e) * I + i);
        const auto& o = ep.obs[t][i];
        if (static_cast<int>(o.size()) != obs_dim) throw std::invalid_argument("make_batch: observation size mismatch");
        std::copy(o.begin(), o.end(), row);
        if (t > 0) row[obs_dim + ep.actions[t - 1][i]] = 1.0;
        row[obs_dim + kNumActions + i] = 1.0;
      }
    }
    for (int t = 0; t < len; ++t) {
      const std::size_t r = static_cast<std::size_t>(t) * B + e;
      std::copy(ep.states[t].begin(), ep.states[t].end(), b.states.row(r));
      std::copy(ep.states[t + 1].begin(), ep.states[t + 1].end(), b.next_states.row(r));
      for (int i = 0; i < I; ++i) {
        b.actions[r * I + i] = ep.actions[t][i];
        b.next_masks[r * I + i] = ep.masks[t + 1][i];
      }
      b.rewards[r] = ep.rewards[t];
      b.valid[r] = 1.0;
      b.bootstrap[r] = (t == len - 1 && ep.terminated) ? 0.0 : 1.0;
    }
  }
  return b;
}

int masked_argmax(const double* q, const ActionMask& mask) {
  int best = -1;
  for (int a = 0; a < kNumActions; ++a) {
    if (!mask[a]) continue;
    if (best < 0 || q[a] > q[best]) best = a;
  }
  if (best < 0) throw std::logic_error("masked_argmax: empty feasibility mask");
  return best;
}

Action select_action(const double* q, const ActionMask& mask, double epsilon, Rng& rng) {
  if (epsilon > 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng) < epsilon) return random_feasible_action(mask, rng);
  }
  return action_from_index(masked_argmax(q, mask));
}

// ---------------------------------------------------------------------------

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

QLearner::QLearner(LearnerConfig config, int n_agents, int obs_dim, int state_dim, std::uint64_t seed)
    : config_(config), n_agents_(n_agents), obs_dim_(obs_dim), state_dim_(state_dim) {
  config_.validate();
  if (n_agents < 1 || obs_dim < 1 || state_dim < 1) throw std::invalid_argument("QLearner: bad dimensions");
  agent_ = AgentNet::create(params_, input_dim(), config_.hidden_dim);
  if (has_mixer()) {
    mixer_ = MixerNet::create(params_, n_agents, state_dim, config_.embed_dim, config_.hypernet_hidden);
  }
  // Weights and biases uniform in +-1/sqrt(fan_in), where a bias takes the fan-in of the
  // weight block before it.
  Rng rng(seed);
  int fan_in = 1;
  for (const nn::ParamBlock& b : params_.layout()) {
    if (b.shape.size() == 2) fan_in = static_cast<int>(b.shape[0]);
    nn::init_uniform(params_.block(b.name), fan_in, rng);
  }
  target_ = params_;
  adam_ = nn::AdamState(params_.size(), config_.learning_rate);
}

void QLearner::set_params(const nn::ParamVector& params) {
  if (!params.same_layout(params_)) throw std::invalid_argument("QLearner::set_params: layout mismatch");
  params_ = params;
}

QLearner::ActState QLearner::initial_act_state() const {
  return {Tensor::matrix(n_agents_, config_.hidden_dim), std::vector<int>(n_agents_, -1)};
}

void QLearner::fill_input_row(double* row, int agent, const std::vector<double>& obs, int prev_action) const {
  if (static_cast<int>(obs.size()) != obs_dim_) throw std::invalid_argument("QLearner: observation size mismatch");
  std::fill(row, row + input_dim(), 0.0);
  std::copy(obs.begin(), obs.end(), row);
  if (prev_action >= 0) row[obs_dim_ + prev_action] = 1.0;
  row[obs_dim_ + kNumActions + agent] = 1.0;
}

Tensor QLearner::q_values(ActState& state, const std::vector<std::vector<double>>& obs) const {
  Tensor x = Tensor::matrix(n_agents_, input_dim());
  for (int i = 0; i < n_agents_; ++i) {
    // Inputs are rounded through float exactly as when stored in the replay buffer.
    std::vector<double> o(obs[i].size());
    for (std::size_t k = 0; k < o.size(); ++k) o[k] = static_cast<float>(obs[i][k]);
    fill_input_row(x.row(i), i, o, state.prev_actions[i]);
  }
  const std::span<const double> p = params_.values();
  Tensor a, h, q;
  agent_.fc1.forward(p, x, a);
  nn::relu_inplace(a);
  agent_.gru.forward(p, a, state.hidden, h, nullptr);
  agent_.fc2.forward(p, h, q);
  state.hidden = std::move(h);
  return q;
}

std::vector<Action> QLearner::act(ActState& state, const std::vector<std::vector<double>>& obs,
                                  const std::vector<ActionMask>& masks, double epsilon, Rng& rng) const {
  const Tensor q = q_values(state, obs);
  std::vector<Action> out(n_agents_);
  for (int i = 0; i < n_agents_; ++i) {
    out[i] = select_action(q.row(i), masks[i], epsilon, rng);
    state.prev_actions[i] = action_index(out[i]);
  }
  return out;
}

double QLearner::compute_loss(const nn::ParamVector& params, const std::vector<const Episode*>& episodes,
                              nn::ParamVector* grad) const {
  return compute_loss(params, make_batch(episodes, n_agents_, obs_dim_, state_dim_), grad);
}

double QLearner::compute_loss(const nn::ParamVector& params, const Batch& batch, nn::ParamVector* grad) const {
  if (!params.same_layout(params_)) throw std::invalid_argument("compute_loss: layout mismatch");
  const int B = batch.size, I = n_agents_, T = batch.steps;
  if (T == 0) return 0.0;
  const std::span<const double> p = params.values();
  const std::span<const double> pt = target_.values();
  const bool need_grad = grad != nullptr;

  const AgentTrace online = agent_forward(agent_, p, batch.inputs, T, need_grad);
  const AgentTrace target = agent_forward(agent_, pt, batch.inputs, T + 1, false);

  // Masked greedy value of each agent at t + 1 under the target net.
  Tensor next_max = Tensor::matrix(static_cast<std::size_t>(T) * B, I);
  Tensor chosen = Tensor::matrix(static_cast<std::size_t>(T) * B, I);
  for (int t = 0; t < T; ++t) {
    for (int e = 0; e < B; ++e) {
      const std::size_t r = static_cast<std::size_t>(t) * B + e;
      for (int i = 0; i < I; ++i) {
        const std::size_t ai = static_cast<std::size_t>(e) * I + i;
        const double* qn = target.q[t + 1].row(ai);
        next_max(r, i) = qn[masked_argmax(qn, batch.next_masks[r * I + i])];
        chosen(r, i) = online.q[t](ai, batch.actions[r * I + i]);
      }
    }
  }

  std::vector<Tensor> dq;
  if (need_grad) dq.assign(T, Tensor::matrix(static_cast<std::size_t>(B) * I, kNumActions));
  double loss = 0.0;

  if (has_mixer()) {
    Tensor y;
    mixer_.forward(pt, next_max, batch.next_states, y, nullptr);
    MixerNet::Cache cache;
    Tensor qtot;
    mixer_.forward(p, chosen, batch.states, qtot, need_grad ? &cache : nullptr);
    Tensor dqtot = Tensor::matrix(qtot.rows(), 1);
    for (std::size_t r = 0; r < qtot.rows(); ++r) {
      const double target_value = batch.rewards[r] + config_.gamma * batch.bootstrap[r] * y(r, 0);
      const double td = (qtot(r, 0) - target_value) * batch.valid[r];
      loss += td * td;
      dqtot(r, 0) = 2.0 * td;
    }
    if (need_grad) {
      Tensor dchosen;
      mixer_.backward(p, cache, dqtot, grad->values(), dchosen);
      for (int t = 0; t < T; ++t) {
        for (int e = 0; e < B; ++e) {
          const std::size_t r = static_cast<std::size_t>(t) * B + e;
          for (int i = 0; i < I; ++i) {
            dq[t](static_cast<std::size_t>(e) * I + i, batch.actions[r * I + i]) = dchosen(r, i);
          }
        }
      }
    }
  } else {
    for (int t = 0; t < T; ++t) {
      for (int e = 0; e < B; ++e) {
        const std::size_t r = static_cast<std::size_t>(t) * B + e;
        for (int i = 0; i < I; ++i) {
          const double target_value = batch.rewards[r] + config_.gamma * batch.bootstrap[r] * next_max(r, i);
          const double td = (chosen(r, i) - target_value) * batch.valid[r];
          loss += td * td;
          if (need_grad) dq[t](static_cast<std::size_t>(e) * I + i, batch.actions[r * I + i]) = 2.0 * td;
        }
      }
    }
  }

  if (need_grad) agent_backward(agent_, p, batch.inputs, online, dq, grad->values());
  return loss;
}

double QLearner::train_step(const EpisodeBuffer& buffer, Rng& rng) {
  if (buffer.size() < static_cast<std::size_t>(config_.batch_size)) {
    throw std::logic_error("train_step: buffer holds fewer episodes than the batch size");
  }
  const auto episodes = buffer.sample(config_.batch_size, rng);
  nn::ParamVector grad = params_.zeros_like();
  const double loss = compute_loss(params_, episodes, &grad);
  nn::clip_grad_norm(grad.values(), config_.grad_clip_norm);
  nn::adam_update(params_, grad.values(), adam_);
  ++train_steps_;
  if (train_steps_ % config_.target_update_period == 0) sync_target();
  return loss;
}

std::uint64_t QLearner::fingerprint() const {
  std::ostringstream os;
  os << "mode=" << learner_mode_name(config_.mode) << ";agents=" << n_agents_ << ";obs=" << obs_dim_
     << ";state=" << state_dim_ << ";hidden=" << config_.hidden_dim;
  if (has_mixer()) os << ";embed=" << config_.embed_dim << ";hyper=" << config_.hypernet_hidden;
  return fnv1a(os.str());
}

void QLearner::save(const std::filesystem::path& path) const { params_.save(path, fingerprint()); }

void QLearner::load(const std::filesystem::path& path) {
  std::uint64_t fp = 0;
  nn::ParamVector loaded = nn::ParamVector::load(path, &fp);
  if (fp != fingerprint() || !loaded.same_layout(params_)) {
    throw ValidationError(path.string() + ": checkpoint does not match this learner configuration");
  }
  params_ = std::move(loaded);
  sync_target();
}

// ---------------------------------------------------------------------------

namespace {

std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

void record_step(Episode& ep, const Env& env, const StepOutcome& out) {
  ep.states.push_back(to_float(out.global_state));
  std::vector<std::vector<float>> obs;
  std::vector<ActionMask> masks;
  for (int i = 0; i < env.n_agents(); ++i) {
    obs.push_back(to_float(out.observations[i]));
    masks.push_back(env.feasible_mask(i));
  }
  ep.obs.push_back(std::move(obs));
  ep.masks.push_back(std::move(masks));
}

template <class Policy>
EpisodeResult play(Env& env, Rng& rng, Policy&& policy) {
  EpisodeResult res;
  res.episode.n_agents = env.n_agents();
  StepOutcome out = env.reset(rng);
  const double total = env.total_initial_data();
  record_step(res.episode, env, out);
  res.trajectory.push_back(snapshot(env, out));
  res.measurements = out.measurements;
  while (!out.episode_done) {
    std::vector<ActionMask> masks(env.n_agents());
    for (int i = 0; i < env.n_agents(); ++i) masks[i] = env.feasible_mask(i);
    const std::vector<Action> actions = policy(out, masks);
    out = env.step(actions, rng);
    std::vector<int> idx(actions.size());
    for (std::size_t i = 0; i < actions.size(); ++i) idx[i] = action_index(actions[i]);
    res.episode.actions.push_back(std::move(idx));
    res.episode.rewards.push_back(total > 0.0 ? out.reward / total : 0.0);
    record_step(res.episode, env, out);
    res.trajectory.push_back(snapshot(env, out));
    res.measurements.insert(res.measurements.end(), out.measurements.begin(), out.measurements.end());
  }
  res.episode.terminated = true;
  res.collected = env.collected();
  res.collection_ratio = total > 0.0 ? res.collected / total : 0.0;
  return res;
}

}  // namespace

EpisodeResult run_episode(const QLearner& learner, Env& env, double epsilon, Rng& rng) {
  if (env.n_agents() != learner.n_agents() || env.obs_dim() != learner.obs_dim() ||
      env.state_dim() != learner.state_dim()) {
    throw std::invalid_argument("run_episode: learner does not match the environment dimensions");
  }
  QLearner::ActState st = learner.initial_act_state();
  return play(env, rng, [&](const StepOutcome& out, const std::vector<ActionMask>& masks) {
    return learner.act(st, out.observations, masks, epsilon, rng);
  });
}

EpisodeResult random_rollout(Env& env, Rng& rng) {
  return play(env, rng, [&](const StepOutcome&, const std::vector<ActionMask>& masks) {
    std::vector<Action> a(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) a[i] = random_feasible_action(masks[i], rng);
    return a;
  });
}

}  // namespace uavfed
