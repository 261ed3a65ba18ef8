#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "latent_shift/errors.hpp"
#include "latent_shift/nn.hpp"
#include "latent_shift/random.hpp"

namespace latent_shift {

struct TrainConfig {
  int epochs = 100;
  int patience = 10;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  Index hidden_width = 64;
  std::uint64_t seed = 0;
  /// Independent initializations per latent fit; the lowest validation loss wins.
  int restarts = 1;
};

/// Shuffled minibatch index lists. A trailing batch of a single row is merged
/// into its predecessor so batch-norm statistics stay defined.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  const auto order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

inline Matrix gather_rows(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = x.row(static_cast<Index>(idx[i]));
  return out;
}

template <class T>
std::vector<T> gather(std::span<const T> v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

struct EarlyStoppingResult {
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;  // 1-based; 0 means the initial model was best
  int epochs_run = 0;
};

/// Runs up to `epochs` calls of `run_epoch(model)`, tracking `val_loss(model)`
/// after each. Stops after `patience` epochs without improvement and leaves
/// the best snapshot (possibly the initial model) in `model`.
template <class Model, class EpochFn, class ValFn>
EarlyStoppingResult train_with_early_stopping(Model& model, int epochs, int patience, EpochFn&& run_epoch,
                                              ValFn&& val_loss) {
  EarlyStoppingResult result;
  result.best_val_loss = val_loss(model);
  if (!std::isfinite(result.best_val_loss)) throw TrainingError("initial validation loss is not finite");
  Model best = model;
  int since_best = 0;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    run_epoch(model);
    const double loss = val_loss(model);
    if (!std::isfinite(loss)) throw TrainingError("validation loss became non-finite at epoch " + std::to_string(epoch));
    result.epochs_run = epoch;
    if (loss < result.best_val_loss) {
      result.best_val_loss = loss;
      result.best_epoch = epoch;
      best = model;
      since_best = 0;
    } else if (++since_best >= patience) {
      break;
    }
  }
  model = std::move(best);
  return result;
}

}  // namespace latent_shift
