#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace uavfed::nn {

/// Dense row-major tensor of doubles. Most kernels use the 2D (rows x cols) view.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : data_.size() / std::max<std::size_t>(rows(), 1); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double* row(std::size_t r) { return data_.data() + r * cols(); }
  const double* row(std::size_t r) const { return data_.data() + r * cols(); }

  /// Reshape to a (rows x cols) matrix and zero it, reusing storage.
  void reset(std::size_t rows, std::size_t cols);
  void fill(double v);

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool operator==(const ParamBlock&) const = default;
};

/// Flat parameter storage plus the layout needed to unflatten it. This is the unit of
/// checkpointing, optimisation and federated averaging.
class ParamVector {
 public:
  /// Appends a zero-initialised block; returns its offset.
  std::size_t add(std::string name, std::vector<std::size_t> shape);

  std::span<double> block(std::string_view name);
  std::span<const double> block(std::string_view name) const;
  const ParamBlock& block_info(std::string_view name) const;
  bool has_block(std::string_view name) const;

  const std::vector<ParamBlock>& layout() const { return layout_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  bool same_layout(const ParamVector& other) const { return layout_ == other.layout_; }
  ParamVector zeros_like() const;

  std::vector<std::pair<std::string, Tensor>> unflatten() const;
  static ParamVector flatten(const std::vector<std::pair<std::string, Tensor>>& blocks);

  /// Versioned binary blob: magic, version, fingerprint, layout header, raw doubles.
  std::string serialize(std::uint64_t fingerprint) const;
  static ParamVector deserialize(std::string_view blob, std::uint64_t* fingerprint = nullptr);
  void save(const std::filesystem::path& path, std::uint64_t fingerprint) const;
  static ParamVector load(const std::filesystem::path& path, std::uint64_t* fingerprint = nullptr);

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<ParamBlock> layout_;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Dense kernels. All "acc" variants add into the output.

/// C (n x m) += A (n x k) * B (k x m)
void gemm_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m);
/// G (k x m) += A^T (k x n) * D (n x m)
void gemm_tn_acc(const double* a, const double* d, double* g, std::size_t n, std::size_t k, std::size_t m);
/// X (n x k) += D (n x m) * B^T (m x k)
void gemm_nt_acc(const double* d, const double* b, double* x, std::size_t n, std::size_t m, std::size_t k);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double elu(double x);
double elu_grad(double x);

void relu_inplace(Tensor& t);
/// Zeroes gradient entries where the ReLU output was not positive.
void relu_backward_inplace(const Tensor& activated, Tensor& grad);

// ---------------------------------------------------------------------------
// Layers. A layer holds offsets into a ParamVector; parameters and gradients are passed
// as spans over storage with that layout.

struct Linear {
  std::size_t w = 0;  // in x out
  std::size_t b = 0;  // out
  int in = 0;
  int out = 0;

  static Linear create(ParamVector& params, const std::string& name, int in, int out);

  /// y = x W + b
  void forward(std::span<const double> params, const Tensor& x, Tensor& y) const;
  /// Accumulates dW and db into `grads`; adds x-gradients into `dx` when given.
  void backward(std::span<const double> params, const Tensor& x, const Tensor& dy,
                std::span<double> grads, Tensor* dx) const;
};

/// Gated recurrent unit with gates ordered (reset, update, candidate):
///   r = sig(x Wr + h Ur + b), z = sig(x Wz + h Uz + b), n = tanh(x Wn + bn + r * (h Un + cn))
///   h' = (1 - z) * n + z * h
struct GruCell {
  std::size_t w_ih = 0;  // in x 3h
  std::size_t w_hh = 0;  // h x 3h
  std::size_t b_ih = 0;  // 3h
  std::size_t b_hh = 0;  // 3h
  int in = 0;
  int hidden = 0;

  struct Cache {
    Tensor x, h_prev, r, z, n, gh_n;
  };

  static GruCell create(ParamVector& params, const std::string& name, int in, int hidden);

  void forward(std::span<const double> params, const Tensor& x, const Tensor& h, Tensor& h_out,
               Cache* cache) const;
  /// Given dL/dh', accumulates parameter gradients; writes dL/dh into dh_prev (overwritten)
  /// and adds dL/dx into dx when given.
  void backward(std::span<const double> params, const Cache& cache, const Tensor& dh_out,
                std::span<double> grads, Tensor* dx, Tensor& dh_prev) const;
};

/// Runs a GRU over a sequence (one tensor per step, each batch x in) from `h0`, returning
/// every hidden state. An empty sequence returns no states and leaves h0 as the final state.
struct GruSequence {
  std::vector<Tensor> hidden;  // hidden[t] is the state after step t
  std::vector<GruCell::Cache> caches;
};
GruSequence gru_forward_sequence(const GruCell& cell, std::span<const double> params,
                                 const std::vector<Tensor>& inputs, const Tensor& h0);
/// Backpropagation through time. `dhidden[t]` is the external gradient on hidden[t].
/// Returns dL/dh0; adds input gradients into `dinputs` when non-null.
Tensor gru_backward_sequence(const GruCell& cell, std::span<const double> params,
                             const GruSequence& seq, const std::vector<Tensor>& dhidden,
                             std::span<double> grads, std::vector<Tensor>* dinputs);

// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t n, double learning_rate) : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

/// Bias-corrected Adam step.
void adam_update(std::vector<double>& params, std::span<const double> grads, AdamState& state);
inline void adam_update(ParamVector& params, std::span<const double> grads, AdamState& state) {
  adam_update(params.values(), grads, state);
}

/// Rescales `grads` so its L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(std::span<double> grads, double max_norm);

// ---------------------------------------------------------------------------

/// Loss at a parameter point; fills `grad` (same layout) with the analytic gradient when non-null.
using LossFn = std::function<double(const ParamVector& params, ParamVector* grad)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool passed = false;
};

/// Central differences against an analytic gradient.
GradCheckReport grad_check(const LossFn& loss, const ParamVector& point, double tolerance,
                           GradCheckOptions options = {});
/// Same, with the analytic gradient supplied separately (lets callers check a corrupted one).
GradCheckReport grad_check(const LossFn& loss, const ParamVector& point, std::span<const double> analytic,
                           double tolerance, GradCheckOptions options = {});

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation of one block.

template <class Rng>
void init_uniform(std::span<double> block, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : block) v = dist(rng);
}

}  // namespace uavfed::nn
