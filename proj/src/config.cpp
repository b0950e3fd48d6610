#include "uavfed/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "uavfed/error.hpp"

namespace uavfed {

using json = nlohmann::json;

namespace {

/// Reads fields of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ValidationError(path_ + ": expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ValidationError(field(key) + ": expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ValidationError(field(key) + ": expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<long long>() < 0) throw ValidationError(field(key) + ": must be >= 0");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ValidationError(field(key) + ": expected a number");
      } else {
        if (!v.is_string()) throw ValidationError(field(key) + ": expected a string");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(field(key) + ": " + e.what());
    }
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : obj_.items()) {
      if (!seen_.count(k)) throw ValidationError(field(k) + ": unknown field");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_channel(Section s, ChannelParams& p) {
  s.get("alpha_los", p.alpha_los);
  s.get("beta_los", p.beta_los);
  s.get("sigma_los", p.sigma_los);
  s.get("alpha_nlos", p.alpha_nlos);
  s.get("beta_nlos", p.beta_nlos);
  s.get("sigma_nlos", p.sigma_nlos);
  s.get("tx_power_w", p.tx_power_w);
  s.get("noise_power_w", p.noise_power_w);
  s.get("snr_threshold", p.snr_threshold);
  s.finish();
}

void read_learner(Section s, LearnerConfig& c) {
  if (s.has("mode")) {
    std::string mode;
    s.get("mode", mode);
    if (mode == "qmix") {
      c.mode = LearnerMode::Qmix;
    } else if (mode == "iql") {
      c.mode = LearnerMode::Iql;
    } else {
      throw ValidationError(s.field("mode") + ": expected \"qmix\" or \"iql\"");
    }
  }
  s.get("gamma", c.gamma);
  s.get("batch_size", c.batch_size);
  s.get("buffer_capacity", c.buffer_capacity);
  s.get("target_update_period", c.target_update_period);
  s.get("epsilon_start", c.epsilon_start);
  s.get("epsilon_end", c.epsilon_end);
  s.get("epsilon_decay_steps", c.epsilon_decay_steps);
  s.get("hidden_dim", c.hidden_dim);
  s.get("embed_dim", c.embed_dim);
  s.get("hypernet_hidden", c.hypernet_hidden);
  s.get("learning_rate", c.learning_rate);
  s.get("grad_clip_norm", c.grad_clip_norm);
  s.finish();
}

void read_pso(Section s, PsoConfig& p) {
  s.get("particles", p.particles);
  s.get("iterations", p.iterations);
  s.get("inertia", p.inertia);
  s.get("cognitive", p.cognitive);
  s.get("social", p.social);
  s.get("velocity_clamp", p.velocity_clamp);
  s.get("min_measurements", p.min_measurements);
  s.finish();
}

void read_fit(Section s, ChannelFitOptions& f) {
  if (s.has("kind")) {
    std::string kind;
    s.get("kind", kind);
    if (kind == "log_linear") {
      f.kind = PsiKind::LogLinear;
    } else if (kind == "network") {
      f.kind = PsiKind::Network;
    } else {
      throw ValidationError(s.field("kind") + ": expected \"log_linear\" or \"network\"");
    }
  }
  s.get("min_samples", f.min_samples);
  s.get("network_hidden", f.network_hidden);
  s.get("network_epochs", f.network_epochs);
  s.get("network_learning_rate", f.network_learning_rate);
  s.finish();
  if (f.min_samples < 1) throw ValidationError(s.field("min_samples") + ": must be >= 1");
  if (f.network_hidden < 1) throw ValidationError(s.field("network_hidden") + ": must be >= 1");
  if (f.network_epochs < 0) throw ValidationError(s.field("network_epochs") + ": must be >= 0");
  if (!(f.network_learning_rate > 0.0)) throw ValidationError(s.field("network_learning_rate") + ": must be > 0");
}

void read_federation(Section s, FedConfig& f) {
  s.get("n_learners", f.n_learners);
  s.get("sync_period", f.sync_period);
  s.get("sim_episodes", f.sim_episodes);
  s.get("real_episodes", f.real_episodes);
  s.get("real_epsilon", f.real_epsilon);
  s.get("reset_buffers", f.reset_buffers);
  s.get("concurrent", f.concurrent);
  if (s.has("prior_channel")) {
    read_channel(Section(s.raw("prior_channel"), s.field("prior_channel")), f.prior_channel);
    try {
      f.prior_channel.validate();
    } catch (const ValidationError& e) {
      throw ValidationError(s.field("prior_") + e.what());
    }
  }
  if (s.has("pso")) read_pso(Section(s.raw("pso"), s.field("pso")), f.pso);
  if (s.has("fit")) read_fit(Section(s.raw("fit"), s.field("fit")), f.fit);
  s.finish();
}

Cell read_cell(const json& v, const std::string& field) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
    throw ValidationError(field + ": expected [ix, iy]");
  }
  return {v[0].get<int>(), v[1].get<int>()};
}

}  // namespace

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  federation.seed = s;
  baseline.seed = s;
}

ExperimentConfig parse_experiment_config(const std::string& json_text, const std::filesystem::path& base_dir,
                                         const std::string& origin) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(origin + ": malformed JSON: " + e.what());
  }
  ExperimentConfig cfg;
  Section top(root, "");

  std::string map;
  if (!top.has("map")) throw ValidationError("map: missing");
  top.get("map", map);
  cfg.map_path = base_dir / map;
  if (!std::filesystem::exists(cfg.map_path)) {
    throw ValidationError("map: file not found: " + cfg.map_path.string());
  }
  MapDocument doc = load_map_document(cfg.map_path);

  if (top.has("channel")) read_channel(Section(top.raw("channel"), "channel"), cfg.channel);
  cfg.channel.validate();

  // Device overrides: full replacement list and/or anchor selection.
  if (top.has("devices")) {
    const json& devs = top.raw("devices");
    if (!devs.is_array()) throw ValidationError("devices: expected an array");
    doc.devices.clear();
    for (std::size_t i = 0; i < devs.size(); ++i) {
      const std::string f = "devices[" + std::to_string(i) + "]";
      Section d(devs[i], f);
      DeviceSpec spec;
      if (!d.has("id") || !d.has("cell") || !d.has("data_init")) throw ValidationError(f + ": needs id, cell, data_init");
      d.get("id", spec.id);
      spec.cell = read_cell(d.raw("cell"), f + ".cell");
      d.get("data_init", spec.data_init);
      d.get("anchor", spec.anchor);
      d.finish();
      doc.devices.push_back(spec);
    }
  }
  if (top.has("anchors")) {
    const json& ids = top.raw("anchors");
    if (!ids.is_array()) throw ValidationError("anchors: expected an array of device ids");
    for (auto& d : doc.devices) d.anchor = false;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!ids[i].is_number_integer()) throw ValidationError("anchors[" + std::to_string(i) + "]: expected an integer");
      const int id = ids[i].get<int>();
      auto it = std::find_if(doc.devices.begin(), doc.devices.end(), [&](const DeviceSpec& d) { return d.id == id; });
      if (it == doc.devices.end()) throw ValidationError("anchors[" + std::to_string(i) + "]: no device with id " + std::to_string(id));
      it->anchor = true;
    }
  }
  if (doc.devices.empty()) throw ValidationError("devices: at least one device is required");

  std::vector<UavSpec> uavs;
  if (!top.has("uavs")) throw ValidationError("uavs: missing");
  const json& ju = top.raw("uavs");
  if (!ju.is_array()) throw ValidationError("uavs: expected an array");
  for (std::size_t i = 0; i < ju.size(); ++i) {
    const std::string f = "uavs[" + std::to_string(i) + "]";
    Section u(ju[i], f);
    UavSpec spec;
    spec.id = static_cast<int>(i);
    u.get("id", spec.id);
    if (!u.has("altitude_m") || !u.has("battery_init")) throw ValidationError(f + ": needs altitude_m and battery_init");
    u.get("altitude_m", spec.altitude_m);
    u.get("battery_init", spec.battery_init);
    u.finish();
    uavs.push_back(spec);
  }

  cfg.env.map = std::make_shared<const CityMap>(std::move(doc.map));
  cfg.env.devices = std::move(doc.devices);
  cfg.env.uavs = std::move(uavs);
  cfg.env.channel = std::make_shared<const GroundTruthChannel>(cfg.channel);
  top.get("slot_duration", cfg.env.slot_duration);
  top.get("log_all_pairs", cfg.env.log_all_pairs);
  // Constructing an env runs every map/device/UAV invariant check.
  { const Env probe(cfg.env); }

  if (top.has("learner")) read_learner(Section(top.raw("learner"), "learner"), cfg.learner);
  cfg.learner.validate();

  cfg.federation.n_learners = static_cast<int>(cfg.env.uavs.size());
  if (top.has("federation")) read_federation(Section(top.raw("federation"), "federation"), cfg.federation);
  try {
    cfg.federation.validate();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    // fed.* and pso.* messages are reported under the config section name
    throw ValidationError("federation." + (msg.rfind("fed.", 0) == 0 ? msg.substr(4) : msg));
  }

  if (top.has("baseline")) {
    Section b(top.raw("baseline"), "baseline");
    b.get("episodes", cfg.baseline.episodes);
    b.get("checkpoint_period", cfg.baseline.checkpoint_period);
    b.finish();
    if (cfg.baseline.episodes < 0) throw ValidationError("baseline.episodes: must be >= 0");
    if (cfg.baseline.checkpoint_period < 0) throw ValidationError("baseline.checkpoint_period: must be >= 0");
  }

  std::uint64_t seed = 0;
  top.get("seed", seed);
  cfg.set_seed(seed);
  std::string out;
  top.get("output_dir", out);
  if (!out.empty()) cfg.output_dir = out;
  top.finish();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path.string() + ": cannot open config file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str(), path.parent_path(), path.string());
}

}  // namespace uavfed
