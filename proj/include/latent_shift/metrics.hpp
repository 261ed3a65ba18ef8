#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "latent_shift/errors.hpp"
#include "latent_shift/nn.hpp"

namespace latent_shift {

/// Fraction of rows where (p >= threshold) agrees with the binary label.
inline double accuracy(const Vector& proba, std::span<const int> labels, double threshold = 0.5) {
  if (static_cast<Index>(labels.size()) != proba.size()) throw ShapeError("accuracy: length mismatch");
  if (labels.empty()) throw ValidationError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    hits += static_cast<std::size_t>((proba(static_cast<Index>(i)) >= threshold ? 1 : 0) == labels[i]);
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Area under the ROC curve as the Mann-Whitney U statistic, tied scores
/// receiving their average rank. Returns 0.5 when one class is absent.
inline double roc_auc(const Vector& scores, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != scores.size()) throw ShapeError("auc: length mismatch");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores(static_cast<Index>(a)) < scores(static_cast<Index>(b)); });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores(static_cast<Index>(order[j + 1])) == scores(static_cast<Index>(order[i]))) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 1) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return 0.5;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

struct MeanStd {
  double mean = 0.0;
  /// Sample standard deviation; absent for fewer than two values.
  std::optional<double> stddev;
};

inline MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

}  // namespace latent_shift
