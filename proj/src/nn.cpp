#include "uavfed/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "uavfed/error.hpp"

namespace uavfed::nn {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  const std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  data_.assign(n, fill);
}

void Tensor::reset(std::size_t rows, std::size_t cols) {
  shape_ = {rows, cols};
  data_.assign(rows * cols, 0.0);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

// ---------------------------------------------------------------------------

std::size_t ParamVector::add(std::string name, std::vector<std::size_t> shape) {
  if (has_block(name)) throw std::invalid_argument("ParamVector::add: duplicate block '" + name + "'");
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  ParamBlock b{std::move(name), std::move(shape), values_.size(), n};
  values_.resize(values_.size() + n, 0.0);
  layout_.push_back(std::move(b));
  return layout_.back().offset;
}

const ParamBlock& ParamVector::block_info(std::string_view name) const {
  for (const ParamBlock& b : layout_) {
    if (b.name == name) return b;
  }
  throw std::out_of_range("ParamVector: no block named '" + std::string(name) + "'");
}

bool ParamVector::has_block(std::string_view name) const {
  return std::any_of(layout_.begin(), layout_.end(), [&](const ParamBlock& b) { return b.name == name; });
}

std::span<double> ParamVector::block(std::string_view name) {
  const ParamBlock& b = block_info(name);
  return std::span<double>(values_).subspan(b.offset, b.size);
}

std::span<const double> ParamVector::block(std::string_view name) const {
  const ParamBlock& b = block_info(name);
  return std::span<const double>(values_).subspan(b.offset, b.size);
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out = *this;
  std::fill(out.values_.begin(), out.values_.end(), 0.0);
  return out;
}

std::vector<std::pair<std::string, Tensor>> ParamVector::unflatten() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const ParamBlock& b : layout_) {
    Tensor t(b.shape);
    std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(b.offset), b.size, t.data());
    out.emplace_back(b.name, std::move(t));
  }
  return out;
}

ParamVector ParamVector::flatten(const std::vector<std::pair<std::string, Tensor>>& blocks) {
  ParamVector out;
  for (const auto& [name, t] : blocks) {
    const std::size_t off = out.add(name, t.shape());
    std::copy_n(t.data(), t.size(), out.values_.begin() + static_cast<std::ptrdiff_t>(off));
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'U', 'V', 'F', 'D', 'P', 'A', 'R', 'M'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto v = s_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > s_.size()) throw ValidationError("parameter blob: truncated");
  }
  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string ParamVector::serialize(std::uint64_t fingerprint) const {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, fingerprint);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(layout_.size()));
  for (const ParamBlock& b : layout_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out += b.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.shape.size()));
    for (std::size_t d : b.shape) put<std::uint64_t>(out, d);
  }
  put<std::uint64_t>(out, values_.size());
  out.append(reinterpret_cast<const char*>(values_.data()), values_.size() * sizeof(double));
  return out;
}

ParamVector ParamVector::deserialize(std::string_view blob, std::uint64_t* fingerprint) {
  Reader r(blob);
  if (r.bytes(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw ValidationError("parameter blob: bad magic");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw ValidationError("parameter blob: unsupported version " + std::to_string(version));
  const auto fp = r.get<std::uint64_t>();
  if (fingerprint) *fingerprint = fp;
  ParamVector out;
  const auto nblocks = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nblocks; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string name(r.bytes(len));
    const auto ndims = r.get<std::uint32_t>();
    std::vector<std::size_t> shape;
    for (std::uint32_t d = 0; d < ndims; ++d) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    out.add(std::move(name), std::move(shape));
  }
  const auto count = r.get<std::uint64_t>();
  if (count != out.values_.size()) throw ValidationError("parameter blob: value count does not match layout");
  const std::string_view raw = r.bytes(count * sizeof(double));
  std::memcpy(out.values_.data(), raw.data(), raw.size());
  if (!r.done()) throw ValidationError("parameter blob: trailing bytes");
  return out;
}

void ParamVector::save(const std::filesystem::path& path, std::uint64_t fingerprint) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write checkpoint");
  const std::string blob = serialize(fingerprint);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

ParamVector ParamVector::load(const std::filesystem::path& path, std::uint64_t* fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path.string() + ": cannot open checkpoint");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str(), fingerprint);
}

// ---------------------------------------------------------------------------

void gemm_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_tn_acc(const double* a, const double* d, double* g, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    const double* di = d + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* gp = g + p * m;
      for (std::size_t j = 0; j < m; ++j) gp[j] += av * di[j];
    }
  }
}

void gemm_nt_acc(const double* d, const double* b, double* x, std::size_t n, std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* di = d + i * m;
    double* xi = x + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += di[j] * bp[j];
      xi[p] += s;
    }
  }
}

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

void relu_inplace(Tensor& t) {
  for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(const Tensor& activated, Tensor& grad) {
  const double* a = activated.data();
  double* g = grad.data();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(a[i] > 0.0)) g[i] = 0.0;
  }
}

// ---------------------------------------------------------------------------

Linear Linear::create(ParamVector& params, const std::string& name, int in, int out) {
  Linear l;
  l.in = in;
  l.out = out;
  l.w = params.add(name + ".w", {static_cast<std::size_t>(in), static_cast<std::size_t>(out)});
  l.b = params.add(name + ".b", {static_cast<std::size_t>(out)});
  return l;
}

void Linear::forward(std::span<const double> params, const Tensor& x, Tensor& y) const {
  if (static_cast<int>(x.cols()) != in) throw std::invalid_argument("Linear::forward: input width mismatch");
  const std::size_t n = x.rows();
  y.reset(n, out);
  const double* bias = params.data() + b;
  for (std::size_t i = 0; i < n; ++i) std::copy_n(bias, out, y.row(i));
  gemm_acc(x.data(), params.data() + w, y.data(), n, in, out);
}

void Linear::backward(std::span<const double> params, const Tensor& x, const Tensor& dy,
                      std::span<double> grads, Tensor* dx) const {
  if (static_cast<int>(dy.cols()) != out || dy.rows() != x.rows()) {
    throw std::invalid_argument("Linear::backward: gradient shape mismatch");
  }
  const std::size_t n = x.rows();
  gemm_tn_acc(x.data(), dy.data(), grads.data() + w, n, in, out);
  double* db = grads.data() + b;
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = dy.row(i);
    for (int j = 0; j < out; ++j) db[j] += r[j];
  }
  if (dx) {
    if (dx->rows() != n || static_cast<int>(dx->cols()) != in) dx->reset(n, in);
    gemm_nt_acc(dy.data(), params.data() + w, dx->data(), n, out, in);
  }
}

// ---------------------------------------------------------------------------

GruCell GruCell::create(ParamVector& params, const std::string& name, int in, int hidden) {
  GruCell g;
  g.in = in;
  g.hidden = hidden;
  const auto h3 = static_cast<std::size_t>(3 * hidden);
  g.w_ih = params.add(name + ".w_ih", {static_cast<std::size_t>(in), h3});
  g.w_hh = params.add(name + ".w_hh", {static_cast<std::size_t>(hidden), h3});
  g.b_ih = params.add(name + ".b_ih", {h3});
  g.b_hh = params.add(name + ".b_hh", {h3});
  return g;
}

void GruCell::forward(std::span<const double> params, const Tensor& x, const Tensor& h, Tensor& h_out,
                      Cache* cache) const {
  if (static_cast<int>(x.cols()) != in || static_cast<int>(h.cols()) != hidden || x.rows() != h.rows()) {
    throw std::invalid_argument("GruCell::forward: shape mismatch");
  }
  const std::size_t n = x.rows();
  const std::size_t H = hidden;
  Tensor gi = Tensor::matrix(n, 3 * H);
  Tensor gh = Tensor::matrix(n, 3 * H);
  const double* bi = params.data() + b_ih;
  const double* bh = params.data() + b_hh;
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(bi, 3 * H, gi.row(i));
    std::copy_n(bh, 3 * H, gh.row(i));
  }
  gemm_acc(x.data(), params.data() + w_ih, gi.data(), n, in, 3 * H);
  gemm_acc(h.data(), params.data() + w_hh, gh.data(), n, H, 3 * H);

  Tensor r = Tensor::matrix(n, H), z = Tensor::matrix(n, H), cand = Tensor::matrix(n, H);
  Tensor ghn = Tensor::matrix(n, H);
  h_out.reset(n, H);
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = gi.row(i);
    const double* c = gh.row(i);
    const double* hp = h.row(i);
    for (std::size_t j = 0; j < H; ++j) {
      const double rj = sigmoid(a[j] + c[j]);
      const double zj = sigmoid(a[H + j] + c[H + j]);
      const double nj = std::tanh(a[2 * H + j] + rj * c[2 * H + j]);
      r(i, j) = rj;
      z(i, j) = zj;
      cand(i, j) = nj;
      ghn(i, j) = c[2 * H + j];
      h_out(i, j) = (1.0 - zj) * nj + zj * hp[j];
    }
  }
  if (cache) {
    cache->x = x;
    cache->h_prev = h;
    cache->r = std::move(r);
    cache->z = std::move(z);
    cache->n = std::move(cand);
    cache->gh_n = std::move(ghn);
  }
}

void GruCell::backward(std::span<const double> params, const Cache& cache, const Tensor& dh_out,
                       std::span<double> grads, Tensor* dx, Tensor& dh_prev) const {
  const std::size_t n = cache.x.rows();
  const std::size_t H = hidden;
  Tensor dgi = Tensor::matrix(n, 3 * H);
  Tensor dgh = Tensor::matrix(n, 3 * H);
  dh_prev.reset(n, H);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < H; ++j) {
      const double g = dh_out(i, j);
      const double rj = cache.r(i, j), zj = cache.z(i, j), nj = cache.n(i, j);
      const double dn = g * (1.0 - zj);
      const double dz = g * (cache.h_prev(i, j) - nj);
      dh_prev(i, j) = g * zj;
      const double dpre_n = dn * (1.0 - nj * nj);
      const double dr = dpre_n * cache.gh_n(i, j);
      const double dpre_r = dr * rj * (1.0 - rj);
      const double dpre_z = dz * zj * (1.0 - zj);
      dgi(i, j) = dpre_r;
      dgi(i, H + j) = dpre_z;
      dgi(i, 2 * H + j) = dpre_n;
      dgh(i, j) = dpre_r;
      dgh(i, H + j) = dpre_z;
      dgh(i, 2 * H + j) = dpre_n * rj;
    }
  }
  gemm_tn_acc(cache.x.data(), dgi.data(), grads.data() + w_ih, n, in, 3 * H);
  gemm_tn_acc(cache.h_prev.data(), dgh.data(), grads.data() + w_hh, n, H, 3 * H);
  double* dbi = grads.data() + b_ih;
  double* dbh = grads.data() + b_hh;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3 * H; ++j) {
      dbi[j] += dgi(i, j);
      dbh[j] += dgh(i, j);
    }
  }
  gemm_nt_acc(dgh.data(), params.data() + w_hh, dh_prev.data(), n, 3 * H, H);
  if (dx) {
    if (dx->rows() != n || static_cast<int>(dx->cols()) != in) dx->reset(n, in);
    gemm_nt_acc(dgi.data(), params.data() + w_ih, dx->data(), n, 3 * H, in);
  }
}

GruSequence gru_forward_sequence(const GruCell& cell, std::span<const double> params,
                                 const std::vector<Tensor>& inputs, const Tensor& h0) {
  GruSequence seq;
  seq.hidden.resize(inputs.size());
  seq.caches.resize(inputs.size());
  const Tensor* h = &h0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    cell.forward(params, inputs[t], *h, seq.hidden[t], &seq.caches[t]);
    h = &seq.hidden[t];
  }
  return seq;
}

Tensor gru_backward_sequence(const GruCell& cell, std::span<const double> params, const GruSequence& seq,
                             const std::vector<Tensor>& dhidden, std::span<double> grads,
                             std::vector<Tensor>* dinputs) {
  if (dhidden.size() != seq.hidden.size()) throw std::invalid_argument("gru_backward_sequence: length mismatch");
  if (seq.hidden.empty()) return {};
  Tensor carry = Tensor::matrix(seq.hidden.back().rows(), cell.hidden);
  if (dinputs) dinputs->resize(seq.hidden.size());
  for (std::size_t t = seq.hidden.size(); t-- > 0;) {
    Tensor dh = dhidden[t];
    for (std::size_t i = 0; i < dh.size(); ++i) dh.data()[i] += carry.data()[i];
    Tensor dprev;
    cell.backward(params, seq.caches[t], dh, grads, dinputs ? &(*dinputs)[t] : nullptr, dprev);
    carry = std::move(dprev);
  }
  return carry;
}

// ---------------------------------------------------------------------------

void adam_update(std::vector<double>& params, std::span<const double> grads, AdamState& s) {
  if (grads.size() != params.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
    throw std::invalid_argument("adam_update: size mismatch");
  }
  s.step += 1;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
    const double mhat = s.m[i] / c1;
    const double vhat = s.v[i] / c2;
    params[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

double clip_grad_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const LossFn& loss, const ParamVector& point, std::span<const double> analytic,
                           double tolerance, GradCheckOptions options) {
  if (analytic.size() != point.size()) throw std::invalid_argument("grad_check: gradient size mismatch");
  GradCheckReport report;
  ParamVector probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = point.values()[i];
    probe.values()[i] = x0 + options.step;
    const double up = loss(probe, nullptr);
    probe.values()[i] = x0 - options.step;
    const double down = loss(probe, nullptr);
    probe.values()[i] = x0;
    const double numeric = (up - down) / (2.0 * options.step);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
    const double rel = std::abs(a - numeric) / denom;
    if (i == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

GradCheckReport grad_check(const LossFn& loss, const ParamVector& point, double tolerance,
                           GradCheckOptions options) {
  ParamVector grad = point.zeros_like();
  loss(point, &grad);
  return grad_check(loss, point, grad.values(), tolerance, options);
}

}  // namespace uavfed::nn
