#include "uavfed/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "uavfed/error.hpp"

namespace uavfed {

nn::ParamVector aggregate(const std::vector<const nn::ParamVector*>& params) {
  if (params.empty()) throw std::invalid_argument("aggregate: no parameter sets");
  for (const auto* p : params) {
    if (!p->same_layout(*params.front())) throw ValidationError("aggregate: parameter layouts differ");
  }
  nn::ParamVector out = *params.front();
  const std::size_t n = params.size();
  std::vector<double> column(n);
  auto& dst = out.values();
  for (std::size_t j = 0; j < dst.size(); ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = params[i]->values()[j];
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (double v : column) acc += v - column.front();
    dst[j] = column.front() + acc / static_cast<double>(n);
  }
  return out;
}

nn::ParamVector aggregate(const std::vector<nn::ParamVector>& params) {
  std::vector<const nn::ParamVector*> ptrs;
  for (const auto& p : params) ptrs.push_back(&p);
  return aggregate(ptrs);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index) {
  // splitmix64 finalizer over a mix of the three words
  std::uint64_t z = base ^ (tag * 0x9E3779B97F4A7C15ULL) ^ (index * 0xD1B54A32D192ED03ULL);
  for (int k = 0; k < 2; ++k) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
  }
  return z;
}

namespace {

enum SeedTag : std::uint64_t { kPolicyInit = 1, kLearner = 2, kReal = 3, kPso = 4, kFit = 5, kInitialGuess = 6 };

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ChannelParams FedConfig::default_prior_channel() {
  ChannelParams p;
  p.alpha_los = -20.0;
  p.beta_los = -40.0;
  p.sigma_los = 3.0;
  // generic 10 dB extra loss behind buildings, steeper decay
  p.alpha_nlos = -30.0;
  p.beta_nlos = -50.0;
  p.sigma_nlos = 6.0;
  return p;
}

void FedConfig::validate() const {
  if (n_learners < 1) throw ValidationError("fed.n_learners: must be >= 1");
  if (sync_period < 1) throw ValidationError("fed.sync_period: must be >= 1");
  if (sim_episodes < 0) throw ValidationError("fed.sim_episodes: must be >= 0");
  if (real_episodes < 0) throw ValidationError("fed.real_episodes: must be >= 0");
  if (!learner_seeds.empty() && static_cast<int>(learner_seeds.size()) != n_learners) {
    throw ValidationError("fed.learner_seeds: need one seed per learner");
  }
  if (!(real_epsilon >= 0.0 && real_epsilon <= 1.0)) throw ValidationError("fed.real_epsilon: must be in [0, 1]");
  pso.validate();
}

std::optional<double> mean_localization_error(const EnvConfig& real,
                                              const std::map<int, LocalizationResult>& est) {
  double sum = 0.0;
  int n = 0;
  for (const DeviceSpec& d : real.devices) {
    if (d.anchor) continue;
    const auto it = est.find(d.id);
    if (it == est.end()) continue;
    const Vec3 truth = real.map->center(GridPos{d.cell.ix, d.cell.iy, 0.0});
    sum += std::hypot(it->second.position.x - truth.x, it->second.position.y - truth.y);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

// ---------------------------------------------------------------------------

FedRun::FedRun(EnvConfig real, LearnerConfig learner, FedConfig config)
    : real_(std::move(real)),
      learner_config_(learner),
      config_(std::move(config)),
      real_rng_(derive_seed(config_.seed, kReal, 0)) {
  config_.validate();
  learner_config_.validate();
  real_.believed_device_cells.clear();
  const Env probe(real_);
  const int agents = probe.n_agents();
  const int obs = probe.obs_dim();
  const int state = probe.state_dim();

  policy_ = std::make_unique<QLearner>(learner_config_, agents, obs, state, derive_seed(config_.seed, kPolicyInit, 0));
  for (int i = 0; i < config_.n_learners; ++i) {
    const std::uint64_t s =
        config_.learner_seeds.empty() ? derive_seed(config_.seed, kLearner, i) : config_.learner_seeds[i];
    LearnerSlot slot{std::make_unique<QLearner>(learner_config_, agents, obs, state, s),
                     EpisodeBuffer(static_cast<std::size_t>(learner_config_.buffer_capacity)), nullptr, Rng(s)};
    learners_.push_back(std::move(slot));
  }
  broadcast(policy_->params());
  for (auto& s : learners_) s.learner->sync_target();

  channel_ = std::make_shared<const LearnedChannel>(LearnedChannel::from_params(config_.prior_channel));
  // With no data every unknown device starts at a uniform random guess.
  for (const DeviceSpec& d : real_.devices) {
    if (d.anchor) continue;
    PsoConfig pso = config_.pso;
    pso.seed = derive_seed(config_.seed, kInitialGuess, static_cast<std::uint64_t>(d.id));
    estimates_[d.id] = localize(d.id, {}, *channel_, *real_.map, pso);
  }
}

EnvConfig FedRun::believed_real_config() const {
  EnvConfig cfg = real_;
  cfg.believed_device_cells.clear();
  for (const DeviceSpec& d : real_.devices) {
    if (d.anchor) {
      cfg.believed_device_cells.push_back(d.cell);
    } else {
      const Vec3& p = estimates_.at(d.id).position;
      cfg.believed_device_cells.push_back(real_.map->cell_at(p.x, p.y));
    }
  }
  return cfg;
}

void FedRun::broadcast(const nn::ParamVector& global) {
  for (auto& s : learners_) {
    s.learner->set_params(global);
  }
}

void FedRun::learn_environment() {
  std::vector<DeviceSpec> anchors;
  for (const DeviceSpec& d : real_.devices) {
    if (d.anchor) anchors.push_back(d);
  }
  const LinkModel& truth = *real_.channel;
  const RadioConstants radio{truth.tx_power_w(), truth.noise_power_w(), truth.snr_threshold()};
  try {
    ChannelFitOptions fit = config_.fit;
    fit.seed = derive_seed(config_.seed, kFit, static_cast<std::uint64_t>(iteration_));
    if (!fit.empty_class_prior) fit.empty_class_prior = config_.prior_channel;
    channel_ = std::make_shared<const LearnedChannel>(
        fit_channel(measurements_.records, anchors, *real_.map, radio, fit));
  } catch (const InsufficientDataError&) {
    // keep the previous channel
  }
  for (const DeviceSpec& d : real_.devices) {
    if (d.anchor) continue;
    PsoConfig pso = config_.pso;
    pso.seed = derive_seed(config_.seed, kPso, static_cast<std::uint64_t>(iteration_) * 100003ULL + d.id);
    const auto prev = estimates_.find(d.id);
    std::optional<Vec3> warm;
    if (prev != estimates_.end()) warm = prev->second.position;
    estimates_[d.id] = localize(d.id, measurements_.records, *channel_, *real_.map, pso, warm);
  }
  const EnvConfig sim = build_simulated_env(real_, estimates_, channel_);
  for (auto& s : learners_) {
    s.env = std::make_unique<Env>(sim);
    if (config_.reset_buffers) s.buffer.clear();
  }
}

void FedRun::train_round(int episodes) {
  const auto batch = static_cast<std::size_t>(learner_config_.batch_size);
  auto work = [&](LearnerSlot& s) {
    for (int k = 0; k < episodes; ++k) {
      EpisodeResult r = run_episode(*s.learner, *s.env, s.learner->epsilon(), s.rng);
      s.learner->add_env_steps(r.episode.length());
      s.buffer.add(std::move(r.episode));
      if (s.buffer.size() >= batch) {
        s.loss_sum += s.learner->train_step(s.buffer, s.rng);
        ++s.loss_count;
      }
    }
  };
  if (!config_.concurrent || learners_.size() == 1) {
    for (auto& s : learners_) work(s);
    return;
  }
  std::vector<std::exception_ptr> errors(learners_.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < learners_.size(); ++i) {
    threads.emplace_back([&, i] {
      try {
        work(learners_[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

const IterationMetrics& FedRun::run_outer_iteration() {
  IterationMetrics row;
  row.iteration = iteration_ + 1;

  // 1. Real-world episode with the global policy.
  Env real_env(believed_real_config());
  EpisodeResult real = run_episode(*policy_, real_env, config_.real_epsilon, real_rng_);
  ++real_world_episodes_;
  measurements_.append(real.measurements);
  last_trajectory_ = std::move(real.trajectory);
  row.collection_ratio = real.collection_ratio;
  row.real_world_episodes = real_world_episodes_;

  // 2. Environment learning.
  learn_environment();
  row.mean_localization_error_m = mean_localization_error(real_, estimates_);

  // 3. Simulated training with synchronous aggregation rounds.
  for (auto& s : learners_) {
    s.loss_sum = 0.0;
    s.loss_count = 0;
  }
  int done = 0;
  while (done < config_.sim_episodes) {
    const int round = std::min(config_.sync_period, config_.sim_episodes - done);
    train_round(round);
    done += round;
    std::vector<const nn::ParamVector*> locals;
    for (const auto& s : learners_) locals.push_back(&s.learner->params());
    const nn::ParamVector global = aggregate(locals);
    policy_->set_params(global);
    broadcast(global);
  }
  simulated_episodes_ += config_.sim_episodes;
  row.simulated_episodes = simulated_episodes_;

  double loss = 0.0;
  long count = 0;
  for (const auto& s : learners_) {
    loss += s.loss_sum;
    count += s.loss_count;
  }
  if (count > 0) row.mean_loss = loss / static_cast<double>(count);

  ++iteration_;
  if (!config_.checkpoint_dir.empty()) {
    std::filesystem::create_directories(config_.checkpoint_dir);
    char name[32];
    std::snprintf(name, sizeof name, "iter_%03d.uvfd", iteration_);
    policy_->save(config_.checkpoint_dir / name);
  }
  metrics_.push_back(row);
  return metrics_.back();
}

RunResult run_algorithm1(const EnvConfig& real, const LearnerConfig& learner, const FedConfig& config) {
  FedRun run(real, learner, config);
  for (int e = 0; e < config.real_episodes; ++e) run.run_outer_iteration();
  return {run.global_params(), run.metrics(), run.estimates()};
}

const char* baseline_name(Baseline b) {
  switch (b) {
    case Baseline::QmixReal:
      return "qmix-real";
    case Baseline::IqlReal:
      return "iql-real";
    case Baseline::ModelAidedQmix:
      return "ma-qmix";
  }
  return "?";
}

RunResult run_baseline(Baseline mode, const EnvConfig& real, const LearnerConfig& learner, const FedConfig& fed,
                       const BaselineConfig& baseline) {
  if (mode == Baseline::ModelAidedQmix) {
    FedConfig single = fed;
    single.n_learners = 1;
    if (!single.learner_seeds.empty()) single.learner_seeds.resize(1);
    return run_algorithm1(real, learner, single);
  }
  if (baseline.episodes < 0) throw ValidationError("baseline.episodes: must be >= 0");
  LearnerConfig lc = learner;
  lc.mode = mode == Baseline::IqlReal ? LearnerMode::Iql : LearnerMode::Qmix;
  EnvConfig cfg = real;
  cfg.believed_device_cells.clear();
  Env env(cfg);
  QLearner q(lc, env.n_agents(), env.obs_dim(), env.state_dim(), derive_seed(baseline.seed, kPolicyInit, 0));
  EpisodeBuffer buffer(static_cast<std::size_t>(lc.buffer_capacity));
  Rng rng(derive_seed(baseline.seed, kLearner, 0));
  RunResult out;
  for (int e = 0; e < baseline.episodes; ++e) {
    EpisodeResult r = run_episode(q, env, q.epsilon(), rng);
    q.add_env_steps(r.episode.length());
    buffer.add(std::move(r.episode));
    IterationMetrics row;
    row.iteration = e + 1;
    row.real_world_episodes = e + 1;
    row.collection_ratio = r.collection_ratio;
    if (buffer.size() >= static_cast<std::size_t>(lc.batch_size)) row.mean_loss = q.train_step(buffer, rng);
    out.metrics.push_back(row);
    if (!baseline.checkpoint_dir.empty() && baseline.checkpoint_period > 0 && (e + 1) % baseline.checkpoint_period == 0) {
      std::filesystem::create_directories(baseline.checkpoint_dir);
      char name[32];
      std::snprintf(name, sizeof name, "episode_%05d.uvfd", e + 1);
      q.save(baseline.checkpoint_dir / name);
    }
  }
  out.params = q.params();
  return out;
}

// ---------------------------------------------------------------------------

void write_metrics_csv(const std::filesystem::path& path, const std::vector<IterationMetrics>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,real_world_episodes,collection_ratio,mean_loss,mean_localization_error_m\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.real_world_episodes << ',' << fmt_double(r.collection_ratio) << ','
        << (r.mean_loss ? fmt_double(*r.mean_loss) : "") << ','
        << (r.mean_localization_error_m ? fmt_double(*r.mean_localization_error_m) : "") << '\n';
  }
}

std::vector<IterationMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("iteration,real_world_episodes,collection_ratio", 0) != 0) {
    throw ValidationError(path.string() + ": not a metrics file");
  }
  std::vector<IterationMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 5) throw ValidationError(path.string() + ": expected 5 columns");
    IterationMetrics r;
    r.iteration = std::stoi(f[0]);
    r.real_world_episodes = std::stol(f[1]);
    r.collection_ratio = std::stod(f[2]);
    if (!f[3].empty()) r.mean_loss = std::stod(f[3]);
    if (!f[4].empty()) r.mean_localization_error_m = std::stod(f[4]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace uavfed
