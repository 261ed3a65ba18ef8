#pragma once

// Posterior-gated mixture of experts for binary labels, and the plain MLP
// (ERM) baseline trained under the same budget.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "latent_shift/dataset.hpp"
#include "latent_shift/errors.hpp"
#include "latent_shift/latent.hpp"
#include "latent_shift/nn.hpp"
#include "latent_shift/training.hpp"

namespace latent_shift {

/// Soft BBSE confusion: joint(i, j) estimates P(argmax phi(X) = i, Z = j)
/// using phi's own posterior mass as the reference distribution over Z.
struct ConfusionEstimate {
  Matrix joint;
  Vector train_marginal;  // column sums of joint
  std::string predictor = "argmax of gating posterior, ties to lowest index";
};

struct MoEModel {
  /// Frozen encoder in eval mode.
  EncoderModel gating;
  /// Shared representation h(x).
  Sequential trunk;
  /// Row i of the weight matrix (and bias i) is expert E_i's final layer,
  /// producing the logit of P(Y = 1 | Z = i, h(x)).
  DenseLayer experts;
  /// Training-distribution reference for shift estimation.
  std::optional<ConfusionEstimate> reference;

  Index head_count() const { return experts.out_dim(); }
  Index input_dim() const { return trunk.in_dim(); }

  /// Per-expert probabilities, N x n_z.
  Matrix head_probabilities(const Matrix& x) const {
    const Matrix logits = experts.forward(trunk.infer(x));
    return logits.unaryExpr([](double v) { return sigmoid(v); });
  }
};

struct ErmModel {
  Sequential network;

  Vector predict_proba(const Matrix& x) const {
    return network.infer(x).col(0).unaryExpr([](double v) { return sigmoid(v); });
  }
};

inline void check_gate(const Vector& gate, Index n_z) {
  if (gate.size() != n_z) throw ValidationError("gate has " + std::to_string(gate.size()) + " entries, model has " + std::to_string(n_z) + " experts");
  if ((gate.array() < -1e-6).any() || std::abs(gate.sum() - 1.0) > 1e-6) {
    throw ValidationError("gate override is not on the simplex");
  }
}

/// Mixture probability sum_i g_i(x) * P(Y=1 | Z=i, x) for every row. Gates
/// default to the gating posterior; `gates`, when given, replaces it row-wise.
inline Vector moe_predict_proba(const MoEModel& model, const Matrix& x, const Matrix* gates = nullptr) {
  if (x.cols() != model.input_dim()) {
    throw ShapeError("MoE expects " + std::to_string(model.input_dim()) + " features, got " + std::to_string(x.cols()));
  }
  const Matrix heads = model.head_probabilities(x);
  Matrix g;
  if (gates != nullptr) {
    if (gates->rows() != x.rows()) throw ShapeError("gate matrix row count mismatch");
    for (Index i = 0; i < gates->rows(); ++i) check_gate(gates->row(i).transpose(), model.head_count());
    g = *gates;
  } else {
    g = model.gating.posterior(x);
  }
  return g.cwiseProduct(heads).rowwise().sum().cwiseMax(0.0).cwiseMin(1.0);
}

inline double moe_predict_proba(const MoEModel& model, const Vector& x, const std::optional<Vector>& gate_override = std::nullopt) {
  const Matrix row = x.transpose();
  if (gate_override) {
    const Matrix g = gate_override->transpose();
    return moe_predict_proba(model, row, &g)(0);
  }
  return moe_predict_proba(model, row)(0);
}

/// Mean binary negative log-likelihood of labels under probabilities q.
inline double binary_nll(const Vector& q, std::span<const int> y) {
  if (static_cast<Index>(y.size()) != q.size()) throw ShapeError("label count mismatch");
  double total = 0.0;
  for (Index i = 0; i < q.size(); ++i) {
    const double p = y[static_cast<std::size_t>(i)] == 1 ? q(i) : 1.0 - q(i);
    total -= std::log(std::max(p, kProbabilityFloor));
  }
  return total / static_cast<double>(q.size());
}

/// Gradient of binary_nll with respect to q.
inline Vector binary_nll_gradient(const Vector& q, std::span<const int> y) {
  const double n = static_cast<double>(q.size());
  Vector d(q.size());
  for (Index i = 0; i < q.size(); ++i) {
    if (y[static_cast<std::size_t>(i)] == 1)
      d(i) = q(i) > kProbabilityFloor ? -1.0 / (n * q(i)) : 0.0;
    else
      d(i) = 1.0 - q(i) > kProbabilityFloor ? 1.0 / (n * (1.0 - q(i))) : 0.0;
  }
  return d;
}

/// Mixture NLL on one batch. `gates` are the (fixed) gating posteriors for
/// the batch rows. Gradients go to the trunk and experts only.
inline double moe_objective(MoEModel& model, const Matrix& x, const Matrix& gates, std::span<const int> y,
                            Sequential* trunk_grad, DenseLayer* experts_grad) {
  Trace trace;
  const Matrix h = model.trunk.forward_train(x, trace);
  const Matrix logits = model.experts.forward(h);
  const Matrix heads = logits.unaryExpr([](double v) { return sigmoid(v); });
  const Vector q = gates.cwiseProduct(heads).rowwise().sum();
  const double loss = binary_nll(q, y);
  if (trunk_grad == nullptr && experts_grad == nullptr) return loss;
  const Vector d_q = binary_nll_gradient(q, y);
  const Matrix d_logits = (gates.array().colwise() * d_q.array() * heads.array() * (1.0 - heads.array())).matrix();
  DenseLayer scratch = model.experts.zeros_like();
  DenseLayer& eg = experts_grad != nullptr ? *experts_grad : scratch;
  const Matrix d_h = model.experts.backward(h, logits, d_logits, eg);
  if (trunk_grad != nullptr) model.trunk.backward(trace, d_h, *trunk_grad);
  return loss;
}

namespace detail {

inline std::vector<int> required_labels(const ObservedTable& t) {
  if (!t.labels) throw ValidationError("table has no labels");
  for (int y : t.labels->ids) {
    if (y == kMissing) throw ValidationError("table contains unlabeled rows; select labeled rows first");
    if (y != 0 && y != 1) throw ValidationError("binary task expects labels in {0, 1}");
  }
  return t.labels->ids;
}

}  // namespace detail

/// Trains trunk and experts on labeled rows with the gating network frozen.
inline MoEModel fit_moe(const EncoderModel& gating, const ObservedTable& labeled_train, const ObservedTable& labeled_val,
                        const TrainConfig& config) {
  const auto y_train = detail::required_labels(labeled_train);
  const auto y_val = detail::required_labels(labeled_val);
  if (labeled_train.rows() == 0 || labeled_val.rows() == 0) throw ValidationError("fit_moe needs labeled rows");
  if (gating.input_dim() != labeled_train.dim()) throw ShapeError("gating network and data have different feature widths");

  Rng rng(config.seed * 7919ULL + 0x5151ULL);
  MoEModel model;
  model.gating = gating;
  model.gating.network.set_batch_norm_mode(BatchNormMode::eval);
  std::vector<Layer> trunk;
  trunk.emplace_back(DenseLayer::initialized("moe.trunk0", labeled_train.dim(), config.hidden_width, Activation::relu, rng));
  model.trunk = Sequential(std::move(trunk));
  model.experts = DenseLayer::initialized("moe.experts", config.hidden_width, gating.output_dim(), Activation::identity, rng);

  const Matrix gates_train = model.gating.posterior(labeled_train.features);
  const Matrix gates_val = model.gating.posterior(labeled_val.features);
  Sequential trunk_grad = model.trunk.zeros_like();
  DenseLayer experts_grad = model.experts.zeros_like();
  AdamState adam;
  adam.learning_rate = config.learning_rate;

  auto run_epoch = [&](MoEModel& m) {
    for (const auto& batch : make_batches(static_cast<std::size_t>(labeled_train.rows()), config.batch_size, rng)) {
      const Matrix xb = gather_rows(labeled_train.features, batch);
      const Matrix gb = gather_rows(gates_train, batch);
      const auto yb = gather<int>(y_train, batch);
      const double loss = moe_objective(m, xb, gb, yb, &trunk_grad, &experts_grad);
      if (!std::isfinite(loss)) throw TrainingError("mixture NLL became non-finite");
      auto params = m.trunk.parameters();
      m.experts.collect(params);
      auto grads = trunk_grad.parameters();
      experts_grad.collect(grads);
      adam_step(params, grads, adam);
    }
  };
  auto val_loss = [&](const MoEModel& m) { return binary_nll(moe_predict_proba(m, labeled_val.features, &gates_val), y_val); };
  train_with_early_stopping(model, config.epochs, config.patience, run_epoch, val_loss);
  return model;
}

/// Plain MLP classifier: two ReLU hidden layers and one logit.
inline ErmModel fit_erm(const ObservedTable& labeled_train, const ObservedTable& labeled_val, const TrainConfig& config) {
  const auto y_train = detail::required_labels(labeled_train);
  const auto y_val = detail::required_labels(labeled_val);
  if (labeled_train.rows() == 0 || labeled_val.rows() == 0) throw ValidationError("fit_erm needs labeled rows");

  Rng rng(config.seed * 104729ULL + 0xE77ULL);
  std::vector<Layer> layers;
  layers.emplace_back(DenseLayer::initialized("erm.dense0", labeled_train.dim(), config.hidden_width, Activation::relu, rng));
  layers.emplace_back(DenseLayer::initialized("erm.dense1", config.hidden_width, config.hidden_width, Activation::relu, rng));
  layers.emplace_back(DenseLayer::initialized("erm.logit", config.hidden_width, 1, Activation::identity, rng));
  ErmModel model{Sequential(std::move(layers))};
  Sequential grad = model.network.zeros_like();
  AdamState adam;
  adam.learning_rate = config.learning_rate;

  auto run_epoch = [&](ErmModel& m) {
    for (const auto& batch : make_batches(static_cast<std::size_t>(labeled_train.rows()), config.batch_size, rng)) {
      const Matrix xb = gather_rows(labeled_train.features, batch);
      const auto yb = gather<int>(y_train, batch);
      Trace trace;
      const Matrix logits = m.network.forward_train(xb, trace);
      const Vector q = logits.col(0).unaryExpr([](double v) { return sigmoid(v); });
      if (!std::isfinite(binary_nll(q, yb))) throw TrainingError("ERM loss became non-finite");
      // d NLL / d logit = (q - y) / N
      Matrix d_logits(q.size(), 1);
      for (Index i = 0; i < q.size(); ++i) d_logits(i, 0) = (q(i) - yb[static_cast<std::size_t>(i)]) / static_cast<double>(q.size());
      m.network.backward(trace, d_logits, grad);
      auto params = m.network.parameters();
      auto grads = grad.parameters();
      adam_step(params, grads, adam);
    }
  };
  auto val_loss = [&](const ErmModel& m) { return binary_nll(m.predict_proba(labeled_val.features), y_val); };
  train_with_early_stopping(model, config.epochs, config.patience, run_epoch, val_loss);
  return model;
}

}  // namespace latent_shift
