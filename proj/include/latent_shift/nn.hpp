#pragma once

// Small differentiable kernel for tabular MLPs: dense and batch-norm layers,
// a sequential container with hand-written backprop, softmax/cross-entropy,
// Adam, and a central-difference gradient checker.
//
// Batches are row-major in the statistical sense: one sample per row of an
// Eigen matrix (N x features).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "latent_shift/errors.hpp"
#include "latent_shift/random.hpp"

namespace latent_shift {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Lower bound applied to probabilities before taking a log.
inline constexpr double kProbabilityFloor = 1e-12;

/// Mutable view of one parameter tensor, flattened.
struct ParamView {
  std::string name;
  std::span<double> values;
};

inline std::span<double> as_span(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<double> as_span(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

enum class Activation { relu, identity };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

// ---------------------------------------------------------------------------
// DenseLayer

struct DenseLayer {
  std::string name;
  Matrix weights;  // out x in
  Vector biases;   // out
  Activation activation = Activation::identity;

  DenseLayer() = default;

  DenseLayer(std::string layer_name, Matrix w, Vector b, Activation act)
      : name(std::move(layer_name)), weights(std::move(w)), biases(std::move(b)), activation(act) {
    if (weights.rows() != biases.size()) {
      throw ShapeError(name + ": weights have " + std::to_string(weights.rows()) +
                       " rows but biases have " + std::to_string(biases.size()) + " entries");
    }
  }

  /// Uniform fan-in initialization: bound sqrt(6/in) for ReLU, sqrt(3/in)
  /// for identity outputs. Biases start at zero.
  static DenseLayer initialized(std::string layer_name, Index in, Index out, Activation act, Rng& rng) {
    const double bound = std::sqrt((act == Activation::relu ? 6.0 : 3.0) / static_cast<double>(in));
    Matrix w(out, in);
    for (Index c = 0; c < in; ++c)
      for (Index r = 0; r < out; ++r) w(r, c) = rng.uniform(-bound, bound);
    return DenseLayer(std::move(layer_name), std::move(w), Vector::Zero(out), act);
  }

  Index in_dim() const { return weights.cols(); }
  Index out_dim() const { return weights.rows(); }

  Matrix forward(const Matrix& x) const {
    if (x.cols() != in_dim()) {
      throw ShapeError(name + ": expected input width " + std::to_string(in_dim()) + ", got " +
                       std::to_string(x.cols()));
    }
    Matrix out = (x * weights.transpose()).rowwise() + biases.transpose();
    if (activation == Activation::relu) out = out.cwiseMax(0.0);
    return out;
  }

  /// Writes parameter gradients into `grad` (same shapes as this layer) and
  /// returns the gradient with respect to the layer input.
  Matrix backward(const Matrix& input, const Matrix& output, const Matrix& d_output,
                  DenseLayer& grad) const {
    Matrix d_pre = d_output;
    if (activation == Activation::relu) {
      d_pre = d_output.cwiseProduct((output.array() > 0.0).cast<double>().matrix());
    }
    grad.weights.noalias() = d_pre.transpose() * input;
    grad.biases = d_pre.colwise().sum().transpose();
    return d_pre * weights;
  }

  DenseLayer zeros_like() const {
    return DenseLayer(name, Matrix::Zero(weights.rows(), weights.cols()), Vector::Zero(biases.size()),
                      activation);
  }

  void collect(std::vector<ParamView>& out) {
    out.push_back({name + ".weights", as_span(weights)});
    out.push_back({name + ".biases", as_span(biases)});
  }
};

// ---------------------------------------------------------------------------
// BatchNormLayer

enum class BatchNormMode { train, eval };

struct BatchNormCache {
  Matrix normalized;  // x_hat
  Vector inv_std;
};

struct BatchNormLayer {
  std::string name;
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  BatchNormMode mode = BatchNormMode::train;

  BatchNormLayer() = default;

  BatchNormLayer(std::string layer_name, Index width)
      : name(std::move(layer_name)),
        gamma(Vector::Ones(width)),
        beta(Vector::Zero(width)),
        running_mean(Vector::Zero(width)),
        running_var(Vector::Ones(width)) {}

  Index width() const { return gamma.size(); }

  void check_width(const Matrix& x) const {
    if (x.cols() != width()) {
      throw ShapeError(name + ": expected input width " + std::to_string(width()) + ", got " +
                       std::to_string(x.cols()));
    }
  }

  /// Affine map from running statistics; used in eval mode.
  Matrix forward_eval(const Matrix& x) const {
    check_width(x);
    const Eigen::ArrayXd scale = gamma.array() / (running_var.array() + epsilon).sqrt();
    const Eigen::ArrayXd shift = beta.array() - running_mean.array() * scale;
    return ((x.array().rowwise() * scale.transpose()).rowwise() + shift.transpose()).matrix();
  }

  /// Batch-statistics normalization. Running statistics move toward the
  /// batch mean and unbiased batch variance when `update_running` is set.
  Matrix forward_train(const Matrix& x, BatchNormCache& cache, bool update_running) {
    check_width(x);
    const double n = static_cast<double>(x.rows());
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Matrix centered = x.rowwise() - mean;
    const Eigen::RowVectorXd var = centered.array().square().colwise().sum().matrix() / n;
    cache.inv_std = (var.array() + epsilon).rsqrt().matrix().transpose();
    cache.normalized = centered.array().rowwise() * cache.inv_std.array().transpose();
    if (update_running) {
      const double unbias = x.rows() > 1 ? n / (n - 1.0) : 1.0;
      running_mean = (1.0 - momentum) * running_mean + momentum * mean.transpose();
      running_var = (1.0 - momentum) * running_var + momentum * unbias * var.transpose();
    }
    return ((cache.normalized.array().rowwise() * gamma.array().transpose()).rowwise() +
            beta.array().transpose())
        .matrix();
  }

  Matrix backward(const BatchNormCache& cache, const Matrix& d_output, BatchNormLayer& grad) const {
    const double n = static_cast<double>(d_output.rows());
    grad.gamma = d_output.cwiseProduct(cache.normalized).colwise().sum().transpose();
    grad.beta = d_output.colwise().sum().transpose();
    const Matrix d_hat = d_output.array().rowwise() * gamma.array().transpose();
    const Eigen::RowVectorXd sum_d = d_hat.colwise().sum();
    const Eigen::RowVectorXd sum_dx = d_hat.cwiseProduct(cache.normalized).colwise().sum();
    Eigen::ArrayXXd d_input = ((n * d_hat).rowwise() - sum_d).array();
    d_input -= cache.normalized.array().rowwise() * sum_dx.array();
    d_input.rowwise() *= (cache.inv_std.array() / n).transpose();
    return d_input.matrix();
  }

  /// Gradient of the eval-mode affine map.
  Matrix backward_eval(const Matrix& input, const Matrix& d_output, BatchNormLayer& grad) const {
    const Eigen::ArrayXd inv_std = (running_var.array() + epsilon).rsqrt();
    const Matrix normalized =
        ((input.rowwise() - running_mean.transpose()).array().rowwise() * inv_std.transpose()).matrix();
    grad.gamma = d_output.cwiseProduct(normalized).colwise().sum().transpose();
    grad.beta = d_output.colwise().sum().transpose();
    return (d_output.array().rowwise() * (gamma.array() * inv_std).transpose()).matrix();
  }

  BatchNormLayer zeros_like() const {
    BatchNormLayer g(name, width());
    g.gamma.setZero();
    g.beta.setZero();
    return g;
  }

  void collect(std::vector<ParamView>& out) {
    out.push_back({name + ".gamma", as_span(gamma)});
    out.push_back({name + ".beta", as_span(beta)});
  }
};

// ---------------------------------------------------------------------------
// Sequential

using Layer = std::variant<DenseLayer, BatchNormLayer>;

/// Intermediate values recorded by Sequential::forward_train for backprop.
struct Trace {
  std::vector<Matrix> activations;  // activations[0] is the input, back() the output
  std::vector<BatchNormCache> bn_caches;
  std::vector<bool> bn_used_batch_stats;
};

class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  bool empty() const { return layers_.empty(); }

  Index in_dim() const {
    if (layers_.empty()) return 0;
    return std::visit(
        [](const auto& l) -> Index {
          if constexpr (std::is_same_v<std::decay_t<decltype(l)>, DenseLayer>)
            return l.in_dim();
          else
            return l.width();
        },
        layers_.front());
  }

  Index out_dim() const {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      if (const auto* d = std::get_if<DenseLayer>(&*it)) return d->out_dim();
    }
    return in_dim();
  }

  void set_batch_norm_mode(BatchNormMode mode) {
    for (auto& l : layers_)
      if (auto* bn = std::get_if<BatchNormLayer>(&l)) bn->mode = mode;
  }

  /// Pure evaluation; batch-norm layers use running statistics.
  Matrix infer(const Matrix& x) const {
    Matrix h = x;
    for (const auto& layer : layers_) {
      h = std::visit(
          [&](const auto& l) -> Matrix {
            if constexpr (std::is_same_v<std::decay_t<decltype(l)>, DenseLayer>)
              return l.forward(h);
            else
              return l.forward_eval(h);
          },
          layer);
    }
    return h;
  }

  /// Training forward pass. Batch-norm layers in train mode normalize with
  /// batch statistics (and update running statistics if `update_running`);
  /// layers in eval mode behave as in `infer`.
  Matrix forward_train(const Matrix& x, Trace& trace, bool update_running = true) {
    trace.activations.clear();
    trace.bn_caches.clear();
    trace.bn_used_batch_stats.clear();
    trace.activations.push_back(x);
    for (auto& layer : layers_) {
      const Matrix& h = trace.activations.back();
      Matrix next;
      if (auto* d = std::get_if<DenseLayer>(&layer)) {
        next = d->forward(h);
      } else {
        auto& bn = std::get<BatchNormLayer>(layer);
        BatchNormCache cache;
        const bool batch_stats = bn.mode == BatchNormMode::train;
        next = batch_stats ? bn.forward_train(h, cache, update_running) : bn.forward_eval(h);
        trace.bn_caches.push_back(std::move(cache));
        trace.bn_used_batch_stats.push_back(batch_stats);
      }
      trace.activations.push_back(std::move(next));
    }
    return trace.activations.back();
  }

  /// Backprop through a trace produced by forward_train on this model.
  /// `grad` must have been created by zeros_like(); its parameters are
  /// overwritten. Returns the gradient with respect to the input.
  Matrix backward(const Trace& trace, const Matrix& d_output, Sequential& grad) const {
    Matrix d = d_output;
    std::size_t bn_index = trace.bn_caches.size();
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const Matrix& input = trace.activations[i];
      const Matrix& output = trace.activations[i + 1];
      if (const auto* dl = std::get_if<DenseLayer>(&layers_[i])) {
        d = dl->backward(input, output, d, std::get<DenseLayer>(grad.layers_[i]));
      } else {
        const auto& bn = std::get<BatchNormLayer>(layers_[i]);
        auto& g = std::get<BatchNormLayer>(grad.layers_[i]);
        --bn_index;
        d = trace.bn_used_batch_stats[bn_index] ? bn.backward(trace.bn_caches[bn_index], d, g)
                                                : bn.backward_eval(input, d, g);
      }
    }
    return d;
  }

  Sequential zeros_like() const {
    std::vector<Layer> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) std::visit([&](const auto& x) { out.emplace_back(x.zeros_like()); }, l);
    return Sequential(std::move(out));
  }

  void collect(std::vector<ParamView>& out) {
    for (auto& l : layers_) std::visit([&](auto& x) { x.collect(out); }, l);
  }

  std::vector<ParamView> parameters() {
    std::vector<ParamView> out;
    collect(out);
    return out;
  }

 private:
  std::vector<Layer> layers_;
};

/// Composes the layers on a single input vector, eval mode.
inline Vector forward_mlp(std::span<const Layer> layers, const Vector& x) {
  Matrix h = x.transpose();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    try {
      h = std::visit(
          [&](const auto& l) -> Matrix {
            if constexpr (std::is_same_v<std::decay_t<decltype(l)>, DenseLayer>)
              return l.forward(h);
            else
              return l.forward_eval(h);
          },
          layers[i]);
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" + e.what() + ")");
    }
  }
  return h.transpose();
}

// ---------------------------------------------------------------------------
// Probabilities and losses

inline Vector softmax(const Vector& v) {
  const double m = v.maxCoeff();
  Vector e = (v.array() - m).exp().matrix();
  return e / e.sum();
}

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out = logits.colwise() - logits.rowwise().maxCoeff();
  // Eigen's vectorized exp clamps its argument, so logits far below the max
  // would come out near DBL_MIN instead of 0.
  const double floor = std::log(std::numeric_limits<double>::min());
  out = (out.array() < floor).select(0.0, out.array().exp()).matrix();
  const Vector sums = out.rowwise().sum();
  return out.array().colwise() / sums.array();
}

/// Backprop through a row-wise softmax given its output.
inline Matrix softmax_rows_backward(const Matrix& probs, const Matrix& d_probs) {
  const Vector dot = probs.cwiseProduct(d_probs).rowwise().sum();
  return probs.cwiseProduct(d_probs.colwise() - dot);
}

/// -log(predicted[target]) with the probability floored at kProbabilityFloor.
inline double cross_entropy(const Vector& predicted, Index target) {
  if (target < 0 || target >= predicted.size()) {
    throw IndexError("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                     std::to_string(predicted.size()) + ")");
  }
  return -std::log(std::max(predicted(target), kProbabilityFloor));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  long step_count = 0;
  std::vector<Eigen::ArrayXd> first_moment;
  std::vector<Eigen::ArrayXd> second_moment;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update. `grads[i]` must match `params[i]` in size.
inline void adam_step(std::span<const ParamView> params, std::span<const ParamView> grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameter tensors but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Eigen::ArrayXd::Zero(static_cast<Index>(p.values.size())));
      state.second_moment.push_back(Eigen::ArrayXd::Zero(static_cast<Index>(p.values.size())));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                     " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].values.size() != grads[i].values.size() ||
        static_cast<Index>(params[i].values.size()) != state.first_moment[i].size()) {
      throw ShapeError("adam_step: shape mismatch for " + params[i].name);
    }
    for (double g : grads[i].values) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient for parameter " + params[i].name);
    }
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Eigen::Map<Eigen::ArrayXd> p(params[i].values.data(), static_cast<Index>(params[i].values.size()));
    Eigen::Map<const Eigen::ArrayXd> g(grads[i].values.data(), static_cast<Index>(grads[i].values.size()));
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.square();
    p -= state.learning_rate * (m / correction1) / ((v / correction2).sqrt() + state.epsilon);
    if (!p.allFinite()) throw TrainingError("parameter " + params[i].name + " became non-finite");
  }
}

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed() const { return max_relative_error < tolerance; }
};

/// Compares `analytic` (flattened in parameter order) against central finite
/// differences of `loss`. Relative error is |a - n| / max(|a|, |n|, floor);
/// the floor keeps vanishing components from dominating through round-off.
template <class LossFn>
GradCheckReport grad_check(LossFn&& loss, std::span<const ParamView> params, std::span<const double> analytic,
                           double tolerance, double step = 1e-5, double floor = 1e-6) {
  auto eval = [&]() {
    const double v = loss();
    if (!std::isfinite(v)) throw EvaluationError("grad_check: loss is not finite");
    return v;
  };
  GradCheckReport report;
  report.tolerance = tolerance;
  eval();
  std::size_t flat = 0;
  for (const auto& p : params) {
    for (std::size_t k = 0; k < p.values.size(); ++k, ++flat) {
      if (flat >= analytic.size()) throw ShapeError("grad_check: analytic gradient is too short");
      double& x = p.values[k];
      const double saved = x;
      x = saved + step;
      const double up = eval();
      x = saved - step;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[flat];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_parameter = p.name;
        report.worst_index = k;
      }
      ++report.checked;
    }
  }
  if (flat != analytic.size()) throw ShapeError("grad_check: analytic gradient length mismatch");
  return report;
}

/// Concatenates gradient tensors in parameter order.
inline std::vector<double> flatten(std::span<const ParamView> views) {
  std::vector<double> out;
  for (const auto& v : views) out.insert(out.end(), v.values.begin(), v.values.end());
  return out;
}

}  // namespace latent_shift
