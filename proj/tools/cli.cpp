#include "uavfed/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uavfed/config.hpp"
#include "uavfed/envlearn.hpp"
#include "uavfed/error.hpp"
#include "uavfed/federation.hpp"
#include "uavfed/learner.hpp"
#include "uavfed/plot.hpp"

namespace uavfed {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEvalStream = 7;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = load_experiment_config(c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path.string() + ": cannot open");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string fmt(double v, int digits = 4) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Device estimates from a localization report (device_id,x_hat,y_hat,...).
std::map<int, Vec3> read_estimates(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("device_id,x_hat,y_hat", 0) != 0) {
    throw ValidationError(path.string() + ":1: not a localization report");
  }
  std::map<int, Vec3> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, x, y;
    if (!std::getline(row, id, ',') || !std::getline(row, x, ',') || !std::getline(row, y, ',')) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    try {
      out[std::stoi(id)] = {std::stod(x), std::stod(y), 0.0};
    } catch (const std::exception&) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
  }
  return out;
}

std::vector<LocalizationReportRow> report_rows(const EnvConfig& env, const std::map<int, LocalizationResult>& est) {
  std::vector<LocalizationReportRow> rows;
  for (const auto& [id, r] : est) {
    LocalizationReportRow row{r, std::nullopt};
    for (const DeviceSpec& d : env.devices) {
      if (d.id != id) continue;
      const Vec3 truth = env.map->center(GridPos{d.cell.ix, d.cell.iy, 0.0});
      row.error_m = std::hypot(r.position.x - truth.x, r.position.y - truth.y);
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::pair<double, double>> ratio_points(const std::vector<IterationMetrics>& rows) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) pts.emplace_back(static_cast<double>(r.real_world_episodes), r.collection_ratio);
  return pts;
}

// ---------------------------------------------------------------------------

int cmd_train(const Common& common, const std::string& algo, std::optional<int> episodes, bool quiet,
              std::ostream& out) {
  ExperimentConfig cfg = load(common);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  std::vector<IterationMetrics> metrics;
  nn::ParamVector final_params;
  LearnerConfig lc = cfg.learner;

  if (algo == "fedqmix" || algo == "ma-qmix") {
    FedConfig fed = cfg.federation;
    if (algo == "ma-qmix") {
      fed.n_learners = 1;
      if (!fed.learner_seeds.empty()) fed.learner_seeds.resize(1);
    }
    fed.checkpoint_dir = dir / "checkpoints";
    FedRun run(cfg.env, lc, fed);
    for (int e = 0; e < fed.real_episodes; ++e) {
      const IterationMetrics& m = run.run_outer_iteration();
      if (!quiet) {
        out << "iteration " << m.iteration << " real_episodes " << m.real_world_episodes << " collection_ratio "
            << fmt(m.collection_ratio) << " localization_error_m "
            << (m.mean_localization_error_m ? fmt(*m.mean_localization_error_m, 2) : std::string("-")) << '\n';
      }
    }
    metrics = run.metrics();
    final_params = run.global_params();
    run.policy().save(dir / "final.uvfd");
    write_measurements_csv(dir / "measurements.csv", run.measurements().records);
    write_localization_report(dir / "estimates.csv", report_rows(cfg.env, run.estimates()));
    write_text(dir / "trajectory.json", trajectory_to_json(run.last_real_trajectory()));
  } else {
    const Baseline mode = algo == "iql" ? Baseline::IqlReal : Baseline::QmixReal;
    BaselineConfig bc = cfg.baseline;
    if (episodes) bc.episodes = *episodes;
    bc.checkpoint_dir = dir / "checkpoints";
    lc.mode = mode == Baseline::IqlReal ? LearnerMode::Iql : LearnerMode::Qmix;
    const RunResult r = run_baseline(mode, cfg.env, lc, cfg.federation, bc);
    metrics = r.metrics;
    final_params = r.params;
    Env probe(cfg.env);
    QLearner q(lc, probe.n_agents(), probe.obs_dim(), probe.state_dim(), 0);
    q.set_params(final_params);
    q.save(dir / "final.uvfd");
    if (!quiet) out << "episodes " << metrics.size() << '\n';
  }
  write_metrics_csv(dir / "metrics.csv", metrics);
  write_text(dir / "collection_ratio.svg", collection_ratio_svg({{algo, ratio_points(metrics)}}));
  if (!metrics.empty()) out << "final collection_ratio " << fmt(metrics.back().collection_ratio) << '\n';
  out << "wrote " << (dir / "metrics.csv").string() << '\n';
  return kExitOk;
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::string& algo,
             const std::string& estimates_path, std::ostream& out) {
  ExperimentConfig cfg = load(common);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  LearnerConfig lc = cfg.learner;
  if (algo == "iql") lc.mode = LearnerMode::Iql;
  if (algo == "qmix" || algo == "fedqmix" || algo == "ma-qmix") lc.mode = LearnerMode::Qmix;

  EnvConfig env_cfg = cfg.env;
  std::map<int, Vec3> estimates;
  if (!estimates_path.empty()) {
    estimates = read_estimates(estimates_path);
    for (const DeviceSpec& d : env_cfg.devices) {
      const auto it = estimates.find(d.id);
      const bool use = !d.anchor && it != estimates.end();
      env_cfg.believed_device_cells.push_back(use ? env_cfg.map->cell_at(it->second.x, it->second.y) : d.cell);
    }
  }
  Env env(env_cfg);
  QLearner q(lc, env.n_agents(), env.obs_dim(), env.state_dim(), derive_seed(cfg.seed, kEvalStream, 1));
  if (!checkpoint.empty()) q.load(checkpoint);
  Rng rng(derive_seed(cfg.seed, kEvalStream, 0));
  const EpisodeResult r = greedy_rollout(q, env, rng);

  const std::string traj = trajectory_to_json(r.trajectory);
  write_text(dir / "trajectory.json", traj);
  write_text(dir / "trajectory.svg", trajectory_svg(*env_cfg.map, env_cfg.devices, r.trajectory, estimates));
  write_measurements_csv(dir / "eval_measurements.csv", r.measurements);
  out << "collection_ratio " << fmt(r.collection_ratio) << '\n';
  out << "steps " << r.episode.length() << '\n';
  return kExitOk;
}

int cmd_localize(const Common& common, const std::string& measurements, std::ostream& out) {
  ExperimentConfig cfg = load(common);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const std::vector<MeasurementRecord> recs = read_measurements_csv(measurements);
  if (recs.empty()) throw InsufficientDataError(measurements + ": no measurements");

  std::vector<DeviceSpec> anchors;
  for (const DeviceSpec& d : cfg.env.devices) {
    if (d.anchor) anchors.push_back(d);
  }
  ChannelFitOptions fit = cfg.federation.fit;
  fit.seed = cfg.seed;
  fit.empty_class_prior = cfg.federation.prior_channel;
  const LearnedChannel ch = fit_channel(recs, anchors, *cfg.env.map, RadioConstants::from(cfg.channel), fit);
  out << "channel los alpha " << fmt(ch.los_model().alpha, 3) << " beta " << fmt(ch.los_model().beta, 3) << " sigma "
      << fmt(ch.los_model().sigma, 3) << (ch.los_model().fallback ? " (fallback)" : "") << '\n';
  out << "channel nlos alpha " << fmt(ch.nlos_model().alpha, 3) << " beta " << fmt(ch.nlos_model().beta, 3)
      << " sigma " << fmt(ch.nlos_model().sigma, 3) << (ch.nlos_model().fallback ? " (fallback)" : "") << '\n';

  std::map<int, LocalizationResult> est;
  for (const DeviceSpec& d : cfg.env.devices) {
    if (d.anchor) continue;
    PsoConfig pso = cfg.federation.pso;
    pso.seed = derive_seed(cfg.seed, 4, static_cast<std::uint64_t>(d.id));
    est[d.id] = localize(d.id, recs, ch, *cfg.env.map, pso);
  }
  const auto rows = report_rows(cfg.env, est);
  write_localization_report(dir / "localization.csv", rows);
  for (const auto& row : rows) {
    out << "device " << row.result.device_id << " x " << fmt(row.result.position.x, 2) << " y "
        << fmt(row.result.position.y, 2) << " n " << row.result.measurements << " error_m "
        << fmt(*row.error_m, 2) << (row.result.low_confidence ? " (low confidence)" : "") << '\n';
  }
  return kExitOk;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::vector<std::string>& labels, const Common& common,
             const std::string& estimates_path, const std::string& output, std::ostream& out) {
  const bool trajectory = fs::path(inputs.front()).extension() == ".json";
  std::string svg;
  if (trajectory) {
    if (inputs.size() != 1) throw ValidationError("plot: one trajectory at a time");
    if (common.config.empty()) throw ValidationError("plot: --config is required for trajectories");
    const ExperimentConfig cfg = load(common);
    const auto traj = trajectory_from_json(read_text(inputs.front()));
    std::map<int, Vec3> estimates;
    if (!estimates_path.empty()) estimates = read_estimates(estimates_path);
    svg = trajectory_svg(*cfg.env.map, cfg.env.devices, traj, estimates);
  } else {
    std::vector<PlotSeries> series;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const std::string label = i < labels.size() ? labels[i] : fs::path(inputs[i]).parent_path().filename().string();
      series.push_back({label.empty() ? inputs[i] : label, ratio_points(read_metrics_csv(inputs[i]))});
    }
    svg = collection_ratio_svg(series);
  }
  write_text(output, svg);
  out << "wrote " << output << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Model-aided federated QMIX for multi-UAV data harvesting"};
  app.require_subcommand(1);

  Common common;
  std::string algo = "fedqmix";
  std::optional<int> episodes;
  bool quiet = false;
  std::string checkpoint, estimates, measurements, output;
  std::vector<std::string> inputs, labels;
  const std::vector<std::string> algos{"fedqmix", "ma-qmix", "qmix", "iql"};

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* o = sub->add_option("--config", common.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    if (config_required) o->required();
    sub->add_option("--seed", common.seed, "base seed (overrides the config)");
    sub->add_option("--out", common.out, "output directory (overrides the config)");
  };

  CLI::App* train = app.add_subcommand("train", "run a training pipeline");
  add_common(train, true);
  train->add_option("--algo", algo, "fedqmix | ma-qmix | qmix | iql")->check(CLI::IsMember(algos));
  train->add_option("--episodes", episodes, "real-world training episodes for qmix/iql");
  train->add_flag("--quiet", quiet, "no per-iteration progress");

  CLI::App* eval = app.add_subcommand("eval", "greedy rollout in the ground-truth environment");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoint, "parameter file; omitted means a fresh network")
      ->check(CLI::ExistingFile);
  eval->add_option("--algo", algo, "network type of the checkpoint")->check(CLI::IsMember(algos));
  eval->add_option("--estimates", estimates, "localization report used as believed device positions")
      ->check(CLI::ExistingFile);

  CLI::App* loc = app.add_subcommand("localize", "fit the channel and localize unknown devices");
  add_common(loc, true);
  loc->add_option("--measurements", measurements, "measurement CSV")->required()->check(CLI::ExistingFile);

  CLI::App* plot = app.add_subcommand("plot", "render metrics CSVs or a trajectory JSON as SVG");
  plot->add_option("--input", inputs, "metrics CSV (repeatable) or one trajectory JSON")
      ->required()
      ->check(CLI::ExistingFile);
  plot->add_option("--label", labels, "series label per input");
  plot->add_option("--config", common.config, "experiment config (trajectory plots)")->check(CLI::ExistingFile);
  plot->add_option("--estimates", estimates, "localization report for cross markers")->check(CLI::ExistingFile);
  plot->add_option("--output,-o", output, "SVG file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(common, algo, episodes, quiet, out);
    if (*eval) return cmd_eval(common, checkpoint, eval->count("--algo") ? algo : "", estimates, out);
    if (*loc) return cmd_localize(common, measurements, out);
    if (*plot) return cmd_plot(inputs, labels, common, estimates, output, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace uavfed
