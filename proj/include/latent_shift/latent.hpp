#pragma once

// Encoder-decoder estimation of P(Z|X): the encoder maps x to a point on the
// n_z-simplex, the row-stochastic decoder M holds P(S|Z), and the pair is fit
// to P(S|X) = M^T phi(x) under cross-entropy plus a max-row-variance penalty.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "latent_shift/dataset.hpp"
#include "latent_shift/errors.hpp"
#include "latent_shift/nn.hpp"
#include "latent_shift/training.hpp"

namespace latent_shift {

/// Which observed column plays the role of S.
enum class LatentTarget { proxy, source_id };

inline const char* to_string(LatentTarget t) { return t == LatentTarget::proxy ? "proxy" : "source_id"; }

inline const CategoricalColumn& target_column(const ObservedTable& t, LatentTarget which) {
  const auto& col = which == LatentTarget::proxy ? t.proxy : t.source_id;
  if (!col) throw ValidationError(std::string("table has no ") + to_string(which) + " column");
  return *col;
}

/// phi: two ReLU hidden layers, a linear layer to n_z logits, batch-norm,
/// then softmax.
struct EncoderModel {
  Sequential network;

  static EncoderModel initialized(Index in_dim, Index n_z, Index hidden, Rng& rng) {
    std::vector<Layer> layers;
    layers.emplace_back(DenseLayer::initialized("encoder.dense0", in_dim, hidden, Activation::relu, rng));
    layers.emplace_back(DenseLayer::initialized("encoder.dense1", hidden, hidden, Activation::relu, rng));
    layers.emplace_back(DenseLayer::initialized("encoder.logits", hidden, n_z, Activation::identity, rng));
    layers.emplace_back(BatchNormLayer("encoder.batch_norm", n_z));
    return EncoderModel{Sequential(std::move(layers))};
  }

  Index input_dim() const { return network.in_dim(); }
  Index output_dim() const { return network.out_dim(); }

  /// Posterior rows for a batch, batch-norm on running statistics.
  Matrix posterior(const Matrix& x) const { return softmax_rows(network.infer(x)); }
  Vector posterior(const Vector& x) const { return posterior(Matrix(x.transpose())).row(0).transpose(); }
};

/// Row-stochastic n_z x n_s matrix, entry (z, s) = P(S = s | Z = z).
struct DecoderMatrix {
  Matrix entries;

  Index n_z() const { return entries.rows(); }
  Index n_s() const { return entries.cols(); }

  /// Uniform rows plus seeded jitter in [-0.01, 0.01], then projected.
  static DecoderMatrix uniform_with_jitter(Index n_z, Index n_s, Rng& rng) {
    DecoderMatrix m{Matrix::Constant(n_z, n_s, 1.0 / static_cast<double>(n_s))};
    for (Index c = 0; c < n_s; ++c)
      for (Index r = 0; r < n_z; ++r) m.entries(r, c) += rng.uniform(-0.01, 0.01);
    m.project();
    return m;
  }

  /// Clip to [0, 1] and renormalize every row; a row with no mass becomes uniform.
  void project() {
    entries = entries.cwiseMax(0.0).cwiseMin(1.0);
    for (Index r = 0; r < entries.rows(); ++r) {
      const double total = entries.row(r).sum();
      if (total > 0.0)
        entries.row(r) /= total;
      else
        entries.row(r).setConstant(1.0 / static_cast<double>(entries.cols()));
    }
  }
};

inline Vector reconstruct_s_given_x(const EncoderModel& encoder, const DecoderMatrix& m, const Vector& x) {
  const Vector phi = encoder.posterior(x);
  if (phi.size() != m.n_z()) {
    throw ShapeError("encoder emits " + std::to_string(phi.size()) + " latent classes, decoder has " +
                     std::to_string(m.n_z()) + " rows");
  }
  return m.entries.transpose() * phi;
}

/// Batch form: row n is sum_z posterior(n, z) * M(z, :).
inline Matrix reconstruct_rows(const Matrix& posterior, const DecoderMatrix& m) {
  if (posterior.cols() != m.n_z()) throw ShapeError("posterior width does not match decoder rows");
  return posterior * m.entries;
}

/// max over rows z of (1/n_s) sum_s (M(z,s) - 1/n_s)^2.
inline double variance_regularizer(const Matrix& m) {
  const double n_s = static_cast<double>(m.cols());
  const Matrix centered = m.array() - 1.0 / n_s;
  return (centered.array().square().rowwise().sum() / n_s).maxCoeff();
}

inline double variance_regularizer(const DecoderMatrix& m) { return variance_regularizer(m.entries); }

/// Subgradient of variance_regularizer: nonzero only on the first row that
/// attains the maximum.
inline Matrix variance_regularizer_gradient(const Matrix& m) {
  const double n_s = static_cast<double>(m.cols());
  const Matrix centered = m.array() - 1.0 / n_s;
  Index row = 0;
  (centered.array().square().rowwise().sum()).maxCoeff(&row);
  Matrix g = Matrix::Zero(m.rows(), m.cols());
  g.row(row) = (2.0 / n_s) * centered.row(row);
  return g;
}

/// Mean cross-entropy of observed ids under per-row predicted distributions.
inline double mean_cross_entropy(const Matrix& predicted, std::span<const int> targets) {
  if (static_cast<Index>(targets.size()) != predicted.rows()) throw ShapeError("target count mismatch");
  double total = 0.0;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    const int t = targets[n];
    if (t < 0 || t >= predicted.cols()) throw IndexError("target id " + std::to_string(t) + " out of range");
    total -= std::log(std::max(predicted(static_cast<Index>(n), t), kProbabilityFloor));
  }
  return total / static_cast<double>(targets.size());
}

struct LatentObjective {
  double reconstruction = 0.0;
  double regularizer = 0.0;
  double total = 0.0;
};

/// Rows of `raw` divided by their sums. The decoder enters the objective
/// through this map, so its gradient has no component along the all-ones
/// direction of each row (which the projection step would discard anyway).
inline Matrix row_normalized(const Matrix& raw) {
  return raw.array().colwise() / raw.rowwise().sum().array();
}

/// Pulls a gradient taken with respect to row_normalized(raw) back to raw.
inline Matrix row_normalized_backward(const Matrix& raw, const Matrix& normalized, const Matrix& d_normalized) {
  const Vector dot = normalized.cwiseProduct(d_normalized).rowwise().sum();
  return (d_normalized.colwise() - dot).array().colwise() / raw.rowwise().sum().array();
}

/// Reconstruction cross-entropy plus lambda times the variance penalty on one
/// batch, batch-norm in training mode. When `encoder_grad` / `decoder_grad`
/// are non-null they receive the gradient of `total`.
inline LatentObjective latent_objective(EncoderModel& encoder, const DecoderMatrix& decoder, const Matrix& x,
                                        std::span<const int> s, double lambda, Sequential* encoder_grad,
                                        Matrix* decoder_grad, bool update_running_stats) {
  Trace trace;
  const Matrix logits = encoder.network.forward_train(x, trace, update_running_stats);
  const Matrix phi = softmax_rows(logits);
  const Matrix m = row_normalized(decoder.entries);
  if (phi.cols() != m.rows()) throw ShapeError("posterior width does not match decoder rows");
  const Matrix p = phi * m;
  LatentObjective obj;
  obj.reconstruction = mean_cross_entropy(p, s);
  obj.regularizer = variance_regularizer(m);
  obj.total = obj.reconstruction + lambda * obj.regularizer;
  if (encoder_grad == nullptr && decoder_grad == nullptr) return obj;

  const double n = static_cast<double>(x.rows());
  Matrix d_p = Matrix::Zero(p.rows(), p.cols());
  for (Index i = 0; i < p.rows(); ++i) {
    const int t = s[static_cast<std::size_t>(i)];
    if (p(i, t) > kProbabilityFloor) d_p(i, t) = -1.0 / (n * p(i, t));
  }
  if (decoder_grad != nullptr) {
    Matrix d_m = phi.transpose() * d_p;
    if (lambda != 0.0) d_m += lambda * variance_regularizer_gradient(m);
    *decoder_grad = row_normalized_backward(decoder.entries, m, d_m);
  }
  if (encoder_grad != nullptr) {
    const Matrix d_phi = d_p * m.transpose();
    encoder.network.backward(trace, softmax_rows_backward(phi, d_phi), *encoder_grad);
  }
  return obj;
}

struct LatentFitReport {
  int chosen_nz = 0;
  double chosen_lambda = 0.0;
  std::map<int, double> val_reconstruction_loss_by_nz;
  std::map<double, double> val_reconstruction_loss_by_lambda;
  double final_val_loss = 0.0;
  int epochs_run = 0;
  /// select_nz hit nz_max without the loss turning back up.
  bool no_elbow = false;
  std::vector<std::string> warnings;
};

struct LatentFit {
  EncoderModel encoder;
  DecoderMatrix decoder;
  LatentFitReport report;
};

namespace detail {

struct LatentPair {
  EncoderModel encoder;
  DecoderMatrix decoder;
};

inline int column_cardinality(const ObservedTable& train, const ObservedTable& val, LatentTarget target) {
  return std::max(target_column(train, target).cardinality, target_column(val, target).cardinality);
}

}  // namespace detail

/// Validation reconstruction loss with the encoder in eval mode.
inline double reconstruction_loss(const EncoderModel& encoder, const DecoderMatrix& decoder, const Matrix& x,
                                  std::span<const int> s) {
  return mean_cross_entropy(reconstruct_rows(encoder.posterior(x), decoder), s);
}

namespace detail {

inline LatentFit fit_latent_once(const ObservedTable& train, const ObservedTable& val, const std::vector<int>& s_train,
                                 const std::vector<int>& s_val, int n_s, int n_z, double lambda, const TrainConfig& config,
                                 Rng& rng) {
  LatentFit fit;
  detail::LatentPair model{EncoderModel::initialized(train.dim(), n_z, config.hidden_width, rng),
                           DecoderMatrix::uniform_with_jitter(n_z, n_s, rng)};
  Sequential encoder_grad = model.encoder.network.zeros_like();
  Matrix decoder_grad;
  AdamState adam;
  adam.learning_rate = config.learning_rate;
  const auto n_train = static_cast<std::size_t>(train.rows());

  auto run_epoch = [&](detail::LatentPair& m) {
    for (const auto& batch : make_batches(n_train, config.batch_size, rng)) {
      const Matrix xb = gather_rows(train.features, batch);
      const auto sb = gather<int>(s_train, batch);
      const auto obj = latent_objective(m.encoder, m.decoder, xb, sb, lambda, &encoder_grad, &decoder_grad, true);
      if (!std::isfinite(obj.total)) throw TrainingError("latent objective became non-finite");
      auto params = m.encoder.network.parameters();
      params.push_back({"decoder", as_span(m.decoder.entries)});
      auto grads = encoder_grad.parameters();
      grads.push_back({"decoder", as_span(decoder_grad)});
      adam_step(params, grads, adam);
      m.decoder.project();
    }
  };
  auto val_loss = [&](const detail::LatentPair& m) {
    return reconstruction_loss(m.encoder, m.decoder, val.features, s_val);
  };

  const auto es = train_with_early_stopping(model, config.epochs, config.patience, run_epoch, val_loss);
  model.encoder.network.set_batch_norm_mode(BatchNormMode::eval);
  fit.encoder = std::move(model.encoder);
  fit.decoder = std::move(model.decoder);
  fit.report.chosen_nz = n_z;
  fit.report.chosen_lambda = lambda;
  fit.report.final_val_loss = es.best_val_loss;
  fit.report.epochs_run = es.epochs_run;
  fit.report.val_reconstruction_loss_by_nz[n_z] = es.best_val_loss;
  fit.report.val_reconstruction_loss_by_lambda[lambda] = es.best_val_loss;
  return fit;
}

}  // namespace detail

/// Trains (phi, M) with Adam and early stopping on validation L_S. M is
/// clipped and renormalized after every step.
/// With config.restarts > 1 the best of several initializations is kept.
inline LatentFit fit_latent(const ObservedTable& train, const ObservedTable& val, LatentTarget target, int n_z,
                            double lambda, const TrainConfig& config) {
  if (n_z < 1) throw ValidationError("n_z must be at least 1");
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be nonnegative");
  if (train.rows() == 0 || val.rows() == 0) throw ValidationError("fit_latent needs nonempty train and validation tables");
  if (train.dim() != val.dim()) throw ShapeError("train and validation feature widths differ");
  const auto& s_train = target_column(train, target).ids;
  const auto& s_val = target_column(val, target).ids;
  const int n_s = detail::column_cardinality(train, val, target);

  if (config.restarts < 1) throw ValidationError("restarts must be at least 1");

  std::optional<LatentFit> best;
  int total_epochs = 0;
  for (int r = 0; r < config.restarts; ++r) {
    Rng rng(config.seed * 1000003ULL + static_cast<std::uint64_t>(n_z) + 7777ULL * static_cast<std::uint64_t>(r));
    auto fit = detail::fit_latent_once(train, val, s_train, s_val, n_s, n_z, lambda, config, rng);
    total_epochs += fit.report.epochs_run;
    if (!best || fit.report.final_val_loss < best->report.final_val_loss) best = std::move(fit);
  }
  LatentFit fit = std::move(*best);
  fit.report.epochs_run = total_epochs;
  if (n_s < n_z) {
    fit.report.warnings.push_back("n_s = " + std::to_string(n_s) + " < n_z = " + std::to_string(n_z) +
                                  ": proxy rank assumption cannot hold");
  }
  return fit;
}

/// Absolute slack under which a larger n_z does not count as an improvement.
inline constexpr double kNzImprovementSlack = 1e-4;

struct NzChoice {
  int chosen_nz = 0;
  bool no_elbow = false;
};

/// Elbow rule on a loss-by-n_z profile keyed 1, 2, ...: the first k whose
/// successor fails to improve by more than `slack`.
inline NzChoice choose_nz(const std::map<int, double>& losses, double slack = kNzImprovementSlack) {
  if (losses.empty()) throw ValidationError("empty loss profile");
  auto it = losses.begin();
  for (auto next = std::next(it); next != losses.end(); ++it, ++next) {
    if (next->second >= it->second - slack) return {it->first, false};
  }
  return {losses.rbegin()->first, true};
}

struct NzSelection {
  LatentFitReport report;
  std::map<int, LatentFit> fits;
};

/// Grows n_z from 1 until validation L_S stops improving or nz_max is reached.
inline NzSelection select_nz(const ObservedTable& train, const ObservedTable& val, LatentTarget target,
                             double lambda, int nz_max, const TrainConfig& config) {
  if (nz_max < 1) throw ValidationError("nz_max must be at least 1");
  NzSelection sel;
  std::map<int, double> losses;
  for (int k = 1; k <= nz_max; ++k) {
    auto fit = fit_latent(train, val, target, k, lambda, config);
    losses[k] = fit.report.final_val_loss;
    for (const auto& w : fit.report.warnings) sel.report.warnings.push_back(w);
    sel.fits.emplace(k, std::move(fit));
    if (k > 1 && losses[k] >= losses[k - 1] - kNzImprovementSlack) break;
  }
  const auto choice = choose_nz(losses);
  sel.report.val_reconstruction_loss_by_nz = losses;
  sel.report.chosen_nz = choice.chosen_nz;
  sel.report.no_elbow = choice.no_elbow;
  sel.report.chosen_lambda = lambda;
  const auto& chosen = sel.fits.at(choice.chosen_nz).report;
  sel.report.final_val_loss = chosen.final_val_loss;
  sel.report.epochs_run = chosen.epochs_run;
  return sel;
}

namespace detail {

inline bool lambda_preferred(double loss, double lambda, double best_loss, double best_lambda) {
  return loss < best_loss || (loss == best_loss && lambda > best_lambda);
}

}  // namespace detail

/// Picks the lambda with the smallest validation L_S; exact ties go to the
/// larger lambda.
inline LatentFit tune_lambda(const ObservedTable& train, const ObservedTable& val, LatentTarget target, int n_z,
                             std::span<const double> grid, const TrainConfig& config) {
  if (grid.empty()) throw ValidationError("lambda grid is empty");
  std::optional<LatentFit> best;
  std::map<double, double> losses;
  for (double lambda : grid) {
    auto fit = fit_latent(train, val, target, n_z, lambda, config);
    const double loss = fit.report.final_val_loss;
    losses[lambda] = loss;
    if (!best || detail::lambda_preferred(loss, lambda, best->report.final_val_loss, best->report.chosen_lambda))
      best = std::move(fit);
  }
  best->report.val_reconstruction_loss_by_lambda = losses;
  return std::move(*best);
}

}  // namespace latent_shift
