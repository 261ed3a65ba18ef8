#pragma once

// Test-time adaptation to a shift in P(Z): black-box shift estimation of the
// ratio w = P_te(Z) / P_tr(Z) from unlabeled test covariates, and Bayes-rule
// reweighting of the gating posterior.

#include <Eigen/SVD>

#include <cmath>
#include <string>
#include <vector>

#include "latent_shift/errors.hpp"
#include "latent_shift/latent.hpp"
#include "latent_shift/moe.hpp"
#include "latent_shift/nn.hpp"

namespace latent_shift {

struct ShiftWeights {
  Vector ratios;
  Vector train_marginal;
  Vector test_marginal_implied;

  static ShiftWeights identity(const Vector& train_marginal) {
    return {Vector::Ones(train_marginal.size()), train_marginal, train_marginal};
  }
};

/// Condition number above which the moment system is treated as singular.
inline constexpr double kMaxConfusionCondition = 1e8;

/// Row index of the largest entry, ties to the lowest index.
inline Index argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Index best = 0;
  for (Index j = 1; j < row.size(); ++j)
    if (row(j) > row(best)) best = j;
  return best;
}

/// Joint of hard predictions and soft posterior mass from a matrix of posterior rows.
inline ConfusionEstimate confusion_from_posteriors(const Matrix& posterior) {
  if (posterior.rows() == 0) throw ValidationError("confusion needs at least one row");
  const Index k = posterior.cols();
  ConfusionEstimate c;
  c.joint = Matrix::Zero(k, k);
  for (Index n = 0; n < posterior.rows(); ++n) c.joint.row(argmax_lowest(posterior.row(n))) += posterior.row(n);
  c.joint /= static_cast<double>(posterior.rows());
  c.train_marginal = c.joint.colwise().sum().transpose();
  return c;
}

inline ConfusionEstimate estimate_confusion(const EncoderModel& gating, const Matrix& train_x) {
  return confusion_from_posteriors(gating.posterior(train_x));
}

/// Fraction of rows whose argmax falls in each class.
inline Vector predicted_marginal(const Matrix& posterior) {
  Vector mu = Vector::Zero(posterior.cols());
  for (Index n = 0; n < posterior.rows(); ++n) mu(argmax_lowest(posterior.row(n))) += 1.0;
  return mu / static_cast<double>(posterior.rows());
}

/// Solves joint * w = mu, clips negative ratios, and rescales so the
/// implied test marginal w .* train_marginal sums to one.
inline ShiftWeights solve_shift(const ConfusionEstimate& confusion, const Vector& test_pred_marginal) {
  const Matrix& c = confusion.joint;
  if (c.rows() != c.cols()) throw ShapeError("confusion matrix must be square");
  if (test_pred_marginal.size() != c.rows()) throw ShapeError("predicted marginal length does not match confusion");
  Eigen::JacobiSVD<Matrix> svd(c, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
  if (!(cond <= kMaxConfusionCondition)) {
    throw ShiftEstimationError("confusion matrix is singular or ill-conditioned (condition number " + std::to_string(cond) +
                               "); fall back to unit ratios");
  }
  Vector w = c.partialPivLu().solve(test_pred_marginal);
  w = w.cwiseMax(0.0);
  const double norm = w.dot(confusion.train_marginal);
  if (!(norm > 0.0)) throw ShiftEstimationError("all estimated ratios are zero; fall back to unit ratios");
  w /= norm;
  ShiftWeights out;
  out.ratios = w;
  out.train_marginal = confusion.train_marginal;
  out.test_marginal_implied = w.cwiseProduct(confusion.train_marginal);
  return out;
}

/// P_te(Z=z|x) proportional to gate(z) * w(z).
inline Vector reweight_posterior(const Vector& gate, const ShiftWeights& w) {
  if (gate.size() != w.ratios.size()) throw ShapeError("gate and ratio lengths differ");
  const Vector num = gate.cwiseProduct(w.ratios);
  const double total = num.sum();
  if (!(total > 0.0)) throw DegenerateReweightError("posterior has no mass where the shift ratios are positive");
  return num / total;
}

inline Matrix reweight_posteriors(const Matrix& gates, const ShiftWeights& w) {
  Matrix out(gates.rows(), gates.cols());
  for (Index n = 0; n < gates.rows(); ++n) out.row(n) = reweight_posterior(gates.row(n).transpose(), w).transpose();
  return out;
}

struct AdaptedPrediction {
  ShiftWeights weights;
  Vector probabilities;
  /// Shift estimation failed and unit ratios were used.
  bool fallback = false;
  std::string fallback_reason;
};

/// Estimates the confounder shift from the test covariates and predicts with
/// reweighted gates. Only the feature matrix of the test data is consumed.
inline AdaptedPrediction adapt_and_predict(const MoEModel& model, const Matrix& test_x) {
  if (test_x.rows() == 0) throw ValidationError("test set is empty");
  if (!model.reference) throw ValidationError("model has no training confusion reference");
  const Matrix gates = model.gating.posterior(test_x);
  AdaptedPrediction out;
  try {
    out.weights = solve_shift(*model.reference, predicted_marginal(gates));
    const Matrix adapted = reweight_posteriors(gates, out.weights);
    out.probabilities = moe_predict_proba(model, test_x, &adapted);
  } catch (const ShiftEstimationError& e) {
    out.fallback = true;
    out.fallback_reason = e.what();
  } catch (const DegenerateReweightError& e) {
    out.fallback = true;
    out.fallback_reason = e.what();
  }
  if (out.fallback) {
    out.weights = ShiftWeights::identity(model.reference->train_marginal);
    out.probabilities = moe_predict_proba(model, test_x, &gates);
  }
  return out;
}

}  // namespace latent_shift
