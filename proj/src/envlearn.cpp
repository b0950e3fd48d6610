#include "uavfed/envlearn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "uavfed/error.hpp"

namespace uavfed {

namespace {

// Shadowing estimates are floored so noiseless data still gives a finite likelihood.
constexpr double kMinSigmaDb = 1e-3;

double log_distance(double d) { return std::log10(std::max(d, 1.0)); }

}  // namespace

std::vector<MeasurementRecord> MeasurementSet::for_device(int device_id) const {
  std::vector<MeasurementRecord> out;
  for (const auto& r : records) {
    if (r.device_id == device_id) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------

double PsiNetwork::predict(double distance_m, double elevation_rad, bool los) const {
  nn::Tensor x = nn::Tensor::matrix(1, 3);
  x(0, 0) = log_distance(distance_m);
  x(0, 1) = elevation_rad;
  x(0, 2) = los ? 1.0 : 0.0;
  nn::Tensor h, y;
  hidden.forward(params.values(), x, h);
  nn::relu_inplace(h);
  out.forward(params.values(), h, y);
  return y_mean + y_scale * y(0, 0);
}

LearnedChannel::LearnedChannel(ClassModel los, ClassModel nlos, RadioConstants radio)
    : los_(los), nlos_(nlos), radio_(radio) {
  if (!(los_.sigma >= 0.0) || !(nlos_.sigma >= 0.0)) throw ValidationError("learned channel: sigma must be >= 0");
}

LearnedChannel LearnedChannel::from_params(const ChannelParams& p) {
  return LearnedChannel({p.alpha_los, p.beta_los, p.sigma_los, 0, false},
                        {p.alpha_nlos, p.beta_nlos, p.sigma_nlos, 0, false}, RadioConstants::from(p));
}

double LearnedChannel::mean_gain_db(double distance_m, double elevation_rad, bool los) const {
  if (network_) return network_->predict(distance_m, elevation_rad, los);
  const ClassModel& m = los ? los_ : nlos_;
  return m.beta + m.alpha * log_distance(distance_m);
}

// ---------------------------------------------------------------------------

namespace {

struct FitSample {
  double d;
  double phi;
  bool los;
  double gain;
};

LearnedChannel::ClassModel least_squares(const std::vector<FitSample>& samples, bool los, bool& ok) {
  LearnedChannel::ClassModel m;
  double sx = 0, sy = 0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    if (s.los != los) continue;
    sx += log_distance(s.d);
    sy += s.gain;
    ++n;
  }
  m.samples = n;
  ok = false;
  if (n < 2) return m;
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (const auto& s : samples) {
    if (s.los != los) continue;
    const double dx = log_distance(s.d) - mx;
    sxx += dx * dx;
    sxy += dx * (s.gain - my);
  }
  if (!(sxx > 1e-12 * n)) return m;
  m.alpha = sxy / sxx;
  m.beta = my - m.alpha * mx;
  double ssr = 0;
  for (const auto& s : samples) {
    if (s.los != los) continue;
    const double r = s.gain - (m.beta + m.alpha * log_distance(s.d));
    ssr += r * r;
  }
  m.sigma = std::max(std::sqrt(ssr / n), kMinSigmaDb);
  ok = true;
  return m;
}

std::shared_ptr<PsiNetwork> train_network(const std::vector<FitSample>& samples, const ChannelFitOptions& opt) {
  auto net = std::make_shared<PsiNetwork>();
  net->hidden = nn::Linear::create(net->params, "psi.hidden", 3, opt.network_hidden);
  net->out = nn::Linear::create(net->params, "psi.out", opt.network_hidden, 1);
  Rng rng(opt.seed);
  int fan_in = 1;
  for (const auto& b : net->params.layout()) {
    if (b.shape.size() == 2) fan_in = static_cast<int>(b.shape[0]);
    nn::init_uniform(net->params.block(b.name), fan_in, rng);
  }
  const std::size_t n = samples.size();
  double mean = 0, var = 0;
  for (const auto& s : samples) mean += s.gain;
  mean /= n;
  for (const auto& s : samples) var += (s.gain - mean) * (s.gain - mean);
  net->y_mean = mean;
  net->y_scale = std::max(std::sqrt(var / n), 1e-6);

  nn::Tensor x = nn::Tensor::matrix(n, 3);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = log_distance(samples[i].d);
    x(i, 1) = samples[i].phi;
    x(i, 2) = samples[i].los ? 1.0 : 0.0;
    y[i] = (samples[i].gain - mean) / net->y_scale;
  }
  nn::AdamState adam(net->params.size(), opt.network_learning_rate);
  nn::Tensor h, out, dout = nn::Tensor::matrix(n, 1), dh;
  for (int epoch = 0; epoch < opt.network_epochs; ++epoch) {
    net->hidden.forward(net->params.values(), x, h);
    nn::relu_inplace(h);
    net->out.forward(net->params.values(), h, out);
    for (std::size_t i = 0; i < n; ++i) dout(i, 0) = 2.0 * (out(i, 0) - y[i]) / n;
    std::vector<double> grad(net->params.size(), 0.0);
    dh = nn::Tensor::matrix(n, opt.network_hidden);
    net->out.backward(net->params.values(), h, dout, grad, &dh);
    nn::relu_backward_inplace(h, dh);
    net->hidden.backward(net->params.values(), x, dh, grad, nullptr);
    nn::adam_update(net->params, grad, adam);
  }
  return net;
}

}  // namespace

LearnedChannel fit_channel(const std::vector<MeasurementRecord>& records, const std::vector<DeviceSpec>& anchors,
                           const CityMap& map, const RadioConstants& radio, const ChannelFitOptions& options) {
  std::map<int, Cell> anchor_cells;
  for (const auto& a : anchors) anchor_cells[a.id] = a.cell;
  std::vector<FitSample> samples;
  for (const auto& r : records) {
    const auto it = anchor_cells.find(r.device_id);
    if (it == anchor_cells.end()) continue;
    const GridPos dev{it->second.ix, it->second.iy, 0.0};
    const Vec3 a = map.center(r.uav_pos), b = map.center(dev);
    samples.push_back({distance(a, b), elevation_angle(a, b), is_los(map, r.uav_pos, dev), r.gain_db});
  }
  if (samples.empty() || samples.size() < options.min_samples) {
    throw InsufficientDataError("fit_channel: " + std::to_string(samples.size()) +
                                " anchor measurements, need at least " + std::to_string(options.min_samples));
  }
  bool los_ok = false, nlos_ok = false;
  LearnedChannel::ClassModel los = least_squares(samples, true, los_ok);
  LearnedChannel::ClassModel nlos = least_squares(samples, false, nlos_ok);
  if (!los_ok && !nlos_ok) throw InsufficientDataError("fit_channel: neither LoS class can be fitted");
  if (!los_ok) {
    const std::size_t n = los.samples;
    los = nlos;
    los.samples = n;
    los.fallback = true;
    if (const auto& prior = options.empty_class_prior) {
      los.alpha = prior->alpha_los;
      los.beta = prior->beta_los;
    }
  } else if (!nlos_ok) {
    const std::size_t n = nlos.samples;
    nlos = los;
    nlos.samples = n;
    nlos.fallback = true;
    if (const auto& prior = options.empty_class_prior) {
      nlos.alpha = prior->alpha_nlos;
      nlos.beta = prior->beta_nlos;
    }
  }
  LearnedChannel channel(los, nlos, radio);
  if (options.kind == PsiKind::Network) {
    auto net = train_network(samples, options);
    // Shadowing estimates come from the network's per-class residuals.
    double ss[2] = {0, 0};
    std::size_t cnt[2] = {0, 0};
    for (const auto& s : samples) {
      const double r = s.gain - net->predict(s.d, s.phi, s.los);
      ss[s.los] += r * r;
      cnt[s.los] += 1;
    }
    for (int c = 0; c < 2; ++c) {
      if (cnt[c] >= 2) {
        const double sigma = std::max(std::sqrt(ss[c] / cnt[c]), kMinSigmaDb);
        (c ? los : nlos).sigma = sigma;
      }
    }
    if (los.fallback) los.sigma = nlos.sigma;
    if (nlos.fallback) nlos.sigma = los.sigma;
    channel = LearnedChannel(los, nlos, radio);
    channel.set_network(std::move(net));
  }
  return channel;
}

// ---------------------------------------------------------------------------

namespace {

double record_term(double gain, double mean, bool los, double sigma_l, double sigma_n) {
  const double r = gain - mean;
  if (los) return std::log((sigma_l * sigma_l) / (sigma_n * sigma_n)) + r * r / (sigma_l * sigma_l);
  return r * r / (sigma_n * sigma_n);
}

}  // namespace

double nll(const std::vector<MeasurementRecord>& records, const Vec3& candidate, const LinkModel& channel,
           const CityMap& map) {
  if (records.empty()) throw InsufficientDataError("nll: no measurements");
  const double sl = std::max(channel.shadowing_sigma_db(true), kMinSigmaDb);
  const double sn = std::max(channel.shadowing_sigma_db(false), kMinSigmaDb);
  const Cell c = map.cell_at(candidate.x, candidate.y);
  const GridPos dev{c.ix, c.iy, 0.0};
  double total = 0.0;
  for (const auto& r : records) {
    const Vec3 u = map.center(r.uav_pos);
    const bool los = is_los(map, r.uav_pos, dev);
    const double mean = channel.mean_gain_db(distance(u, candidate), elevation_angle(u, candidate), los);
    total += record_term(r.gain_db, mean, los, sl, sn);
  }
  return total;
}

NllEvaluator::NllEvaluator(const std::vector<MeasurementRecord>& records, const LinkModel& channel,
                           const CityMap& map)
    : records_(records), channel_(channel), map_(map) {
  if (records_.empty()) throw InsufficientDataError("nll: no measurements");
  std::map<GridPos, std::size_t> index;
  for (const auto& r : records_) {
    auto [it, inserted] = index.emplace(r.uav_pos, positions_.size());
    if (inserted) {
      positions_.push_back(r.uav_pos);
      centers_.push_back(map_.center(r.uav_pos));
    }
    position_of_.push_back(it->second);
  }
  los_cache_.resize(positions_.size());
}

bool NllEvaluator::los(std::size_t position, Cell cell) {
  auto& cache = los_cache_[position];
  if (cache.empty()) cache.assign(map_.cell_count(), -1);
  signed char& slot = cache[map_.index(cell)];
  if (slot < 0) slot = is_los(map_, positions_[position], GridPos{cell.ix, cell.iy, 0.0}) ? 1 : 0;
  return slot == 1;
}

double NllEvaluator::operator()(double x, double y) {
  const double sl = std::max(channel_.shadowing_sigma_db(true), kMinSigmaDb);
  const double sn = std::max(channel_.shadowing_sigma_db(false), kMinSigmaDb);
  const Cell c = map_.cell_at(x, y);
  const Vec3 cand{x, y, 0.0};
  double total = 0.0;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const std::size_t p = position_of_[i];
    const Vec3& u = centers_[p];
    const bool l = los(p, c);
    const double mean = channel_.mean_gain_db(distance(u, cand), elevation_angle(u, cand), l);
    total += record_term(records_[i].gain_db, mean, l, sl, sn);
  }
  return total;
}

// ---------------------------------------------------------------------------

void PsoConfig::validate() const {
  auto fail = [](const std::string& f, const std::string& why) { throw ValidationError("pso." + f + ": " + why); };
  if (particles < 2) fail("particles", "must be >= 2");
  if (iterations < 0) fail("iterations", "must be >= 0");
  if (!(velocity_clamp > 0.0)) fail("velocity_clamp", "must be > 0");
  if (!(inertia >= 0.0)) fail("inertia", "must be >= 0");
  if (!(cognitive >= 0.0) || !(social >= 0.0)) fail("cognitive", "coefficients must be >= 0");
}

namespace {

std::vector<MeasurementRecord> device_records(int device_id, const std::vector<MeasurementRecord>& all) {
  std::vector<MeasurementRecord> out;
  for (const auto& r : all) {
    if (r.device_id == device_id) out.push_back(r);
  }
  return out;
}

}  // namespace

LocalizationResult localize(int device_id, const std::vector<MeasurementRecord>& all_records,
                            const LinkModel& channel, const CityMap& map, const PsoConfig& pso,
                            std::optional<Vec3> warm_start) {
  pso.validate();
  const std::vector<MeasurementRecord> records = device_records(device_id, all_records);
  Rng rng(pso.seed);
  const double ex = map.extent_x_m(), ey = map.extent_y_m();
  std::uniform_real_distribution<double> ux(0.0, ex), uy(0.0, ey);

  LocalizationResult res;
  res.device_id = device_id;
  res.measurements = records.size();
  if (records.size() < std::max<std::size_t>(pso.min_measurements, 1)) {
    res.low_confidence = true;
    if (warm_start) {
      res.position = {warm_start->x, warm_start->y, 0.0};
    } else {
      const double x = ux(rng);
      const double y = uy(rng);
      res.position = {x, y, 0.0};
    }
    res.nll = records.empty() ? std::numeric_limits<double>::quiet_NaN() : nll(records, res.position, channel, map);
    return res;
  }

  NllEvaluator f(records, channel, map);
  const int n = pso.particles;
  const double vmx = pso.velocity_clamp * ex, vmy = pso.velocity_clamp * ey;
  std::uniform_real_distribution<double> vx(-vmx, vmx), vy(-vmy, vmy), u01(0.0, 1.0);
  std::vector<double> px(n), py(n), pvx(n), pvy(n), bx(n), by(n), bf(n);
  for (int i = 0; i < n; ++i) {
    px[i] = ux(rng);
    py[i] = uy(rng);
    pvx[i] = vx(rng);
    pvy[i] = vy(rng);
  }
  if (warm_start) {
    px[0] = std::clamp(warm_start->x, 0.0, ex);
    py[0] = std::clamp(warm_start->y, 0.0, ey);
  }
  int g = 0;
  for (int i = 0; i < n; ++i) {
    bx[i] = px[i];
    by[i] = py[i];
    bf[i] = f(px[i], py[i]);
    if (bf[i] < bf[g]) g = i;
  }
  for (int it = 0; it < pso.iterations; ++it) {
    for (int i = 0; i < n; ++i) {
      const double r1x = u01(rng), r1y = u01(rng), r2x = u01(rng), r2y = u01(rng);
      pvx[i] = pso.inertia * pvx[i] + pso.cognitive * r1x * (bx[i] - px[i]) + pso.social * r2x * (bx[g] - px[i]);
      pvy[i] = pso.inertia * pvy[i] + pso.cognitive * r1y * (by[i] - py[i]) + pso.social * r2y * (by[g] - py[i]);
      pvx[i] = std::clamp(pvx[i], -vmx, vmx);
      pvy[i] = std::clamp(pvy[i], -vmy, vmy);
      px[i] += pvx[i];
      py[i] += pvy[i];
      if (px[i] < 0.0 || px[i] > ex) {
        px[i] = std::clamp(px[i], 0.0, ex);
        pvx[i] = 0.0;
      }
      if (py[i] < 0.0 || py[i] > ey) {
        py[i] = std::clamp(py[i], 0.0, ey);
        pvy[i] = 0.0;
      }
      const double v = f(px[i], py[i]);
      if (v < bf[i]) {
        bf[i] = v;
        bx[i] = px[i];
        by[i] = py[i];
      }
    }
    for (int i = 0; i < n; ++i) {
      if (bf[i] < bf[g]) g = i;
    }
  }
  res.position = {bx[g], by[g], 0.0};
  res.nll = bf[g];
  return res;
}

LocalizationResult grid_search(int device_id, const std::vector<MeasurementRecord>& all_records,
                               const LinkModel& channel, const CityMap& map) {
  const std::vector<MeasurementRecord> records = device_records(device_id, all_records);
  NllEvaluator f(records, channel, map);
  LocalizationResult best;
  best.device_id = device_id;
  best.measurements = records.size();
  best.nll = std::numeric_limits<double>::infinity();
  for (int iy = 0; iy < map.height_cells(); ++iy) {
    for (int ix = 0; ix < map.width_cells(); ++ix) {
      const Vec3 c = map.center(GridPos{ix, iy, 0.0});
      const double v = f(c.x, c.y);
      if (v < best.nll) {
        best.nll = v;
        best.position = c;
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

EnvConfig build_simulated_env(const EnvConfig& real, const std::map<int, LocalizationResult>& estimates,
                              std::shared_ptr<const LinkModel> channel) {
  EnvConfig sim = real;
  sim.channel = std::move(channel);
  sim.believed_device_cells.clear();
  sim.log_all_pairs = false;
  for (DeviceSpec& d : sim.devices) {
    if (d.anchor) continue;
    const auto it = estimates.find(d.id);
    if (it == estimates.end()) {
      throw std::invalid_argument("build_simulated_env: no estimate for device " + std::to_string(d.id));
    }
    d.cell = real.map->cell_at(it->second.position.x, it->second.position.y);
  }
  return sim;
}

void write_localization_report(const std::filesystem::path& path, const std::vector<LocalizationReportRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot write localization report");
  const bool with_error = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.error_m.has_value(); });
  out << "device_id,x_hat,y_hat,nll,n_meas" << (with_error ? ",error_m" : "") << "\n";
  char buf[256];
  for (const auto& row : rows) {
    const auto& r = row.result;
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.10g,%zu", r.device_id, r.position.x, r.position.y, r.nll,
                  r.measurements);
    out << buf;
    if (with_error) {
      if (row.error_m) {
        std::snprintf(buf, sizeof buf, ",%.6f", *row.error_m);
        out << buf;
      } else {
        out << ",";
      }
    }
    out << "\n";
  }
}

}  // namespace uavfed
