#pragma once

// End-to-end runs: configuration, the two training phases, evaluation on a
// shifted test split, and the multi-seed comparison against ERM.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "latent_shift/dataset.hpp"
#include "latent_shift/errors.hpp"
#include "latent_shift/latent.hpp"
#include "latent_shift/metrics.hpp"
#include "latent_shift/moe.hpp"
#include "latent_shift/oracles.hpp"
#include "latent_shift/shift.hpp"
#include "latent_shift/training.hpp"

namespace latent_shift {

enum class TaskKind { proxy, multisource, csv };

inline const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::proxy: return "proxy";
    case TaskKind::multisource: return "multisource";
    default: return "csv";
  }
}

inline TaskKind parse_task(const std::string& s) {
  if (s == "proxy") return TaskKind::proxy;
  if (s == "multisource" || s == "multi-source") return TaskKind::multisource;
  if (s == "csv") return TaskKind::csv;
  throw ValidationError("unknown task '" + s + "' (expected proxy, multisource or csv)");
}

struct ExperimentConfig {
  TaskKind task = TaskKind::proxy;
  std::uint64_t seed = 0;
  /// Rows per split; per source for the multi-source task.
  std::size_t n_samples = 10000;
  std::vector<double> lambda_grid{1e-3, 1e-2, 1e-1, 1.0, 10.0};
  int nz_max = 6;
  int epochs_latent = 100;
  int epochs_moe = 25;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  double val_fraction = 0.2;
  bool standardize = false;
  int patience = 10;
  int restarts = 3;
  /// multisource task: the one source that keeps its labels. Absent picks the
  /// first source whose P(Z) covers every latent class.
  std::optional<std::size_t> labeled_source;
  double x1_noise_sd = kDefaultX1NoiseSd;
  /// csv task: which column stands in for S. Empty picks proxy when present.
  std::string latent_target;
  CsvSchema csv;
};

namespace detail {

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  for (const auto& part : split_csv_line(s)) out.emplace_back(trim(part));
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& value, std::size_t line) {
  std::istringstream in(value);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) throw ParseError("config key '" + key + "': cannot parse '" + value + "'", line);
  return v;
}

inline bool parse_flag(const std::string& key, const std::string& value, std::size_t line) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ParseError("config key '" + key + "' expects true or false", line);
}

}  // namespace detail

/// Flat `key = value` text, one pair per line, '#' starts a comment. Lists
/// are comma-separated. Unknown keys are errors.
inline ExperimentConfig parse_config(const std::string& text, ExperimentConfig cfg = {}) {
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string_view sv(raw);
    if (const auto hash = sv.find('#'); hash != std::string_view::npos) sv = sv.substr(0, hash);
    sv = detail::trim(sv);
    if (sv.empty()) continue;
    const auto eq = sv.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", line);
    const std::string key(detail::trim(sv.substr(0, eq)));
    const std::string value(detail::trim(sv.substr(eq + 1)));
    using detail::parse_number;
    if (key == "task") {
      try {
        cfg.task = parse_task(value);
      } catch (const ValidationError& e) {
        throw ParseError(e.what(), line);
      }
    } else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value, line);
    else if (key == "n_samples") cfg.n_samples = parse_number<std::size_t>(key, value, line);
    else if (key == "lambda_grid") {
      cfg.lambda_grid.clear();
      for (const auto& v : detail::split_list(value)) cfg.lambda_grid.push_back(parse_number<double>(key, v, line));
    } else if (key == "nz_max") cfg.nz_max = parse_number<int>(key, value, line);
    else if (key == "epochs_latent") cfg.epochs_latent = parse_number<int>(key, value, line);
    else if (key == "epochs_moe") cfg.epochs_moe = parse_number<int>(key, value, line);
    else if (key == "learning_rate") cfg.learning_rate = parse_number<double>(key, value, line);
    else if (key == "batch_size") cfg.batch_size = parse_number<std::size_t>(key, value, line);
    else if (key == "val_fraction") cfg.val_fraction = parse_number<double>(key, value, line);
    else if (key == "standardize") cfg.standardize = detail::parse_flag(key, value, line);
    else if (key == "patience") cfg.patience = parse_number<int>(key, value, line);
    else if (key == "restarts") cfg.restarts = parse_number<int>(key, value, line);
    else if (key == "labeled_source") cfg.labeled_source = parse_number<std::size_t>(key, value, line);
    else if (key == "x1_noise_sd") cfg.x1_noise_sd = parse_number<double>(key, value, line);
    else if (key == "latent_target") cfg.latent_target = value;
    else if (key == "csv_features") cfg.csv.features = detail::split_list(value);
    else if (key == "csv_label") cfg.csv.label = value;
    else if (key == "csv_proxy") cfg.csv.proxy = value;
    else if (key == "csv_source") cfg.csv.source = value;
    else if (key == "csv_latent") cfg.csv.latent = value;
    else throw ParseError("unknown config key '" + key + "'", line);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig defaults = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(defaults));
}

inline void validate(const ExperimentConfig& c) {
  if (c.n_samples == 0) throw ValidationError("n_samples must be positive");
  if (c.lambda_grid.empty()) throw ValidationError("lambda_grid is empty");
  for (double l : c.lambda_grid)
    if (!(l >= 0.0)) throw ValidationError("lambda_grid entries must be nonnegative");
  if (c.nz_max < 1) throw ValidationError("nz_max must be at least 1");
  if (c.epochs_latent < 1 || c.epochs_moe < 1) throw ValidationError("epoch counts must be positive");
  if (!(c.learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (c.batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) throw ValidationError("val_fraction must lie in (0, 1)");
  if (c.patience < 1 || c.restarts < 1) throw ValidationError("patience and restarts must be positive");
  if (!c.latent_target.empty() && c.latent_target != "proxy" && c.latent_target != "source_id") {
    throw ValidationError("latent_target must be proxy or source_id");
  }
  if (c.labeled_source && *c.labeled_source >= default_source_marginals().size())
    throw ValidationError("labeled_source out of range");
}

/// Every key in the format parse_config reads.
inline std::string to_text(const ExperimentConfig& c) {
  std::ostringstream o;
  const auto num = [](double v) { return detail::format_double(v); };
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
  };
  o << "task = " << to_string(c.task) << "\nseed = " << c.seed << "\nn_samples = " << c.n_samples << "\nlambda_grid = ";
  for (std::size_t i = 0; i < c.lambda_grid.size(); ++i) o << (i ? "," : "") << num(c.lambda_grid[i]);
  o << "\nnz_max = " << c.nz_max << "\nepochs_latent = " << c.epochs_latent << "\nepochs_moe = " << c.epochs_moe
    << "\nlearning_rate = " << num(c.learning_rate) << "\nbatch_size = " << c.batch_size << "\nval_fraction = " << num(c.val_fraction)
    << "\nstandardize = " << (c.standardize ? "true" : "false") << "\npatience = " << c.patience
    << "\nrestarts = " << c.restarts << "\nx1_noise_sd = " << num(c.x1_noise_sd)
    << '\n';
  if (c.labeled_source) o << "labeled_source = " << *c.labeled_source << '\n';
  if (!c.latent_target.empty()) o << "latent_target = " << c.latent_target << '\n';
  if (!c.csv.features.empty()) o << "csv_features = " << join(c.csv.features) << '\n';
  if (c.csv.label) o << "csv_label = " << *c.csv.label << '\n';
  if (c.csv.proxy) o << "csv_proxy = " << *c.csv.proxy << '\n';
  if (c.csv.source) o << "csv_source = " << *c.csv.source << '\n';
  if (c.csv.latent) o << "csv_latent = " << *c.csv.latent << '\n';
  return o.str();
}

inline TrainConfig latent_train_config(const ExperimentConfig& c, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = c.epochs_latent;
  t.patience = c.patience;
  t.batch_size = c.batch_size;
  t.learning_rate = c.learning_rate;
  t.seed = seed;
  t.restarts = c.restarts;
  return t;
}

/// The mixture gets a shorter patience to match its smaller epoch budget.
inline constexpr int kMoePatience = 5;

inline TrainConfig moe_train_config(const ExperimentConfig& c, std::uint64_t seed) {
  TrainConfig t = latent_train_config(c, seed);
  t.epochs = c.epochs_moe;
  t.patience = std::min(c.patience, kMoePatience);
  t.restarts = 1;
  return t;
}

// ---------------------------------------------------------------------------
// Data

struct TaskData {
  TabularDataset train;
  TabularDataset val;
  TabularDataset test;
};

/// Generates train and test splits for a synthetic task and carves the
/// validation rows out of train.
inline std::size_t first_full_support_source(const std::vector<std::vector<double>>& sources) {
  for (std::size_t k = 0; k < sources.size(); ++k)
    if (std::all_of(sources[k].begin(), sources[k].end(), [](double p) { return p > 0.0; })) return k;
  throw ValidationError("no source covers every latent class");
}

inline std::size_t labeled_source(const ExperimentConfig& c) {
  return c.labeled_source ? *c.labeled_source : first_full_support_source(default_source_marginals());
}

inline TaskData make_synthetic_task(const ExperimentConfig& c, std::uint64_t seed) {
  TabularDataset train, test;
  if (c.task == TaskKind::proxy) {
    ProxyTaskSpec spec;
    spec.seed = seed;
    spec.n_samples = c.n_samples;
    spec.x1_noise_sd = c.x1_noise_sd;
    train = generate_proxy_task(spec, Split::train);
    test = generate_proxy_task(spec, Split::test);
  } else if (c.task == TaskKind::multisource) {
    MultiSourceTaskSpec spec;
    spec.seed = seed;
    spec.n_samples_per_source = c.n_samples;
    spec.labeled_source = labeled_source(c);
    spec.x1_noise_sd = c.x1_noise_sd;
    train = generate_multisource_task(spec, Split::train);
    test = generate_multisource_task(spec, Split::test);
  } else {
    throw ValidationError("the csv task has no generator");
  }
  auto [tr, va] = split_train_val(train, c.val_fraction, seed);
  return {std::move(tr), std::move(va), std::move(test)};
}

/// First source whose P(Z) puts mass on every latent class.
inline LatentTarget resolve_target(const ExperimentConfig& c, const ObservedTable& train) {
  if (c.task == TaskKind::proxy) return LatentTarget::proxy;
  if (c.task == TaskKind::multisource) return LatentTarget::source_id;
  if (c.latent_target == "proxy") return LatentTarget::proxy;
  if (c.latent_target == "source_id") return LatentTarget::source_id;
  if (train.proxy) return LatentTarget::proxy;
  if (train.source_id) return LatentTarget::source_id;
  throw ValidationError("training data has neither a proxy nor a source column");
}

// ---------------------------------------------------------------------------
// Training

struct TrainedModel {
  /// Empty when features are used as given.
  Standardizer standardizer;
  LatentTarget target = LatentTarget::proxy;
  MoEModel moe;
  DecoderMatrix decoder;
  LatentFitReport latent_report;

  Matrix prepare(const Matrix& x) const { return standardizer.apply(x); }
};

struct TrainOutcome {
  TrainedModel ours;
  /// Same n_z, lambda = 0; only when requested.
  std::optional<TrainedModel> unregularized;
  std::optional<ErmModel> erm;
};

struct TrainOptions {
  bool unregularized = false;
  bool erm = false;
};

namespace detail {

template <class F>
auto staged(const char* stage, F&& f) {
  try {
    return f();
  } catch (const TrainingError& e) {
    throw TrainingError(std::string(stage) + ": " + e.what());
  }
}

inline TrainedModel assemble(const LatentFit& fit, const ObservedTable& train, const ObservedTable& val,
                             const Standardizer& standardizer, LatentTarget target, const TrainConfig& moe_cfg,
                             const char* stage) {
  TrainedModel m;
  m.standardizer = standardizer;
  m.target = target;
  m.decoder = fit.decoder;
  m.latent_report = fit.report;
  m.moe = staged(stage, [&] { return fit_moe(fit.encoder, train.labeled_rows(), val.labeled_rows(), moe_cfg); });
  // Reference over the pooled training covariates, labeled or not.
  m.moe.reference = estimate_confusion(fit.encoder, train.features);
  return m;
}

}  // namespace detail

/// select_nz at lambda = 0, tune_lambda at the chosen n_z, then the mixture
/// of experts on the labeled rows.
inline TrainOutcome train_pipeline(const ObservedTable& train_in, const ObservedTable& val_in, const ExperimentConfig& c,
                                   TrainOptions options = {}, std::optional<std::uint64_t> seed_override = std::nullopt) {
  validate(c);
  train_in.validate();
  val_in.validate();
  if (train_in.dim() != val_in.dim()) throw ShapeError("train and validation feature widths differ");
  if (train_in.labeled_count() == 0 || val_in.labeled_count() == 0) {
    throw ValidationError("both train and validation need labeled rows");
  }
  const std::uint64_t seed = seed_override.value_or(c.seed);
  const LatentTarget target = resolve_target(c, train_in);

  Standardizer standardizer;
  ObservedTable train = train_in, val = val_in;
  if (c.standardize) {
    standardizer = Standardizer::fit(train.features);
    train.features = standardizer.apply(train.features);
    val.features = standardizer.apply(val.features);
  }

  const TrainConfig lcfg = latent_train_config(c, seed);
  const TrainConfig mcfg = moe_train_config(c, seed);
  NzSelection sel = detail::staged("n_z selection", [&] { return select_nz(train, val, target, 0.0, c.nz_max, lcfg); });
  const int n_z = sel.report.chosen_nz;
  LatentFit tuned = detail::staged("lambda tuning", [&] { return tune_lambda(train, val, target, n_z, c.lambda_grid, lcfg); });
  tuned.report.val_reconstruction_loss_by_nz = sel.report.val_reconstruction_loss_by_nz;
  tuned.report.no_elbow = sel.report.no_elbow;
  tuned.report.warnings.insert(tuned.report.warnings.begin(), sel.report.warnings.begin(), sel.report.warnings.end());

  TrainOutcome out;
  out.ours = detail::assemble(tuned, train, val, standardizer, target, mcfg, "mixture of experts");
  if (options.unregularized) {
    LatentFit& base = sel.fits.at(n_z);
    base.report.val_reconstruction_loss_by_nz = sel.report.val_reconstruction_loss_by_nz;
    base.report.no_elbow = sel.report.no_elbow;
    out.unregularized = detail::assemble(base, train, val, standardizer, target, mcfg, "mixture of experts (lambda = 0)");
  }
  if (options.erm) {
    out.erm = detail::staged("ERM", [&] { return fit_erm(train.labeled_rows(), val.labeled_rows(), mcfg); });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  double accuracy = 0.0;
  double auc = 0.0;
  double unadapted_accuracy = 0.0;
  double unadapted_auc = 0.0;
  ShiftWeights weights;
  bool fallback = false;
  std::string fallback_reason;
  /// Mean |adapted - unadapted| probability.
  double mean_abs_adaptation = 0.0;
  Vector probabilities;
};

inline Evaluation evaluate_model(const TrainedModel& model, const ObservedTable& test) {
  if (!test.labels) throw ValidationError("test data has no label column");
  for (int y : test.labels->ids)
    if (y != 0 && y != 1) throw ValidationError("test labels must all be present and binary");
  if (test.dim() != model.moe.input_dim()) {
    throw ShapeError("model expects " + std::to_string(model.moe.input_dim()) + " features, test data has " +
                     std::to_string(test.dim()));
  }
  const Matrix x = model.prepare(test.features);
  const auto& y = test.labels->ids;
  const AdaptedPrediction adapted = adapt_and_predict(model.moe, x);
  const Vector plain = moe_predict_proba(model.moe, x);
  Evaluation e;
  e.accuracy = accuracy(adapted.probabilities, y);
  e.auc = roc_auc(adapted.probabilities, y);
  e.unadapted_accuracy = accuracy(plain, y);
  e.unadapted_auc = roc_auc(plain, y);
  e.weights = adapted.weights;
  e.fallback = adapted.fallback;
  e.fallback_reason = adapted.fallback_reason;
  e.mean_abs_adaptation = (adapted.probabilities - plain).cwiseAbs().mean();
  e.probabilities = adapted.probabilities;
  return e;
}

struct BaselineEvaluation {
  double accuracy = 0.0;
  double auc = 0.0;
};

inline BaselineEvaluation evaluate_erm(const ErmModel& erm, const Standardizer& standardizer, const ObservedTable& test) {
  const Vector p = erm.predict_proba(standardizer.apply(test.features));
  return {accuracy(p, test.labels->ids), roc_auc(p, test.labels->ids)};
}

/// Best-permutation max-abs gap between a learned decoder and the true
/// P(S|Z); infinity when the shapes differ.
inline double decoder_recovery_error(const DecoderMatrix& learned, const Matrix& truth) {
  if (learned.entries.rows() != truth.rows() || learned.entries.cols() != truth.cols()) {
    return std::numeric_limits<double>::infinity();
  }
  return check_permutation_recovery(Matrix(truth.transpose()), Matrix(learned.entries.transpose())).max_abs_error;
}

/// Best-permutation max-abs gap between an implied and a true marginal.
inline double marginal_recovery_error(const Vector& implied, std::span<const double> truth) {
  if (implied.size() != static_cast<Index>(truth.size())) return std::numeric_limits<double>::infinity();
  Matrix t(1, implied.size());
  for (Index i = 0; i < implied.size(); ++i) t(0, i) = truth[static_cast<std::size_t>(i)];
  return check_permutation_recovery(t, Matrix(implied.transpose())).max_abs_error;
}

// ---------------------------------------------------------------------------
// Multi-seed comparison

struct SeedResult {
  std::uint64_t seed = 0;
  BaselineEvaluation erm;
  Evaluation unregularized;
  Evaluation ours;
  LatentFitReport report;
  LatentFitReport unregularized_report;
  double decoder_error = 0.0;
  double marginal_error = 0.0;
  double wall_time_seconds = 0.0;
};

struct TaskComparison {
  TaskKind task = TaskKind::proxy;
  std::size_t labeled_source = 0;
  std::vector<SeedResult> seeds;
  double wall_time_seconds = 0.0;
};

/// Worker count from LATENT_SHIFT_THREADS, at least 1.
inline unsigned worker_count(std::size_t jobs) {
  unsigned n = 1;
  if (const char* env = std::getenv("LATENT_SHIFT_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) n = static_cast<unsigned>(v);
    } catch (const std::exception&) {
      throw ValidationError(std::string("LATENT_SHIFT_THREADS is not an integer: ") + env);
    }
  }
  return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(n, jobs)));
}

/// Runs fn(i) for i in [0, n) on up to worker_count(n) threads. The first
/// exception is rethrown after all workers stop.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = worker_count(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// ERM, Ours (lambda = 0) and Ours on one synthetic task over the given
/// seeds. Each seed draws fresh data and a fresh initialization.
inline TaskComparison compare_on_task(ExperimentConfig c, std::span<const std::uint64_t> seeds,
                                      const std::function<void(const SeedResult&)>& progress = {}) {
  if (c.task == TaskKind::csv) throw ValidationError("comparison runs on the synthetic tasks only");
  const auto t0 = std::chrono::steady_clock::now();
  TaskComparison out;
  out.task = c.task;
  out.labeled_source = c.task == TaskKind::multisource ? labeled_source(c) : 0;
  out.seeds.resize(seeds.size());
  std::mutex progress_mutex;
  parallel_for(seeds.size(), [&](std::size_t i) {
    const auto s0 = std::chrono::steady_clock::now();
    const std::uint64_t seed = seeds[i];
    const TaskData data = make_synthetic_task(c, seed);
    const TrainOutcome trained = train_pipeline(data.train.observed, data.val.observed, c, {true, true}, seed);
    SeedResult r;
    r.seed = seed;
    r.erm = evaluate_erm(*trained.erm, trained.ours.standardizer, data.test.observed);
    r.ours = evaluate_model(trained.ours, data.test.observed);
    r.unregularized = evaluate_model(*trained.unregularized, data.test.observed);
    r.report = trained.ours.latent_report;
    r.unregularized_report = trained.unregularized->latent_report;
    r.decoder_error = c.task == TaskKind::proxy ? decoder_recovery_error(trained.ours.decoder, default_proxy_channel())
                                                : std::numeric_limits<double>::quiet_NaN();
    r.marginal_error = marginal_recovery_error(r.ours.weights.test_marginal_implied, default_test_marginal());
    r.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - s0).count();
    out.seeds[i] = r;
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(r);
    }
  });
  out.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

template <class F>
MeanStd summarize(const TaskComparison& t, F&& metric) {
  std::vector<double> v;
  for (const auto& s : t.seeds) v.push_back(metric(s));
  return mean_std(v);
}

/// Target accuracy (mean, std) for a method on a synthetic task, for
/// side-by-side display.
struct ReferenceValue {
  double mean;
  double stddev;
};

inline std::optional<ReferenceValue> reference_accuracy(TaskKind task, const std::string& method) {
  static const std::map<std::string, ReferenceValue> proxy{
      {"ERM", {0.484, 0.001}}, {"Ours (lambda=0)", {0.870, 0.021}}, {"Ours", {0.896, 0.002}}};
  static const std::map<std::string, ReferenceValue> multi{
      {"ERM", {0.466, 0.006}}, {"Ours (lambda=0)", {0.794, 0.037}}, {"Ours", {0.811, 0.039}}};
  const auto& table = task == TaskKind::proxy ? proxy : multi;
  if (auto it = table.find(method); it != table.end()) return it->second;
  return std::nullopt;
}

inline std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> s(count);
  for (std::size_t i = 0; i < count; ++i) s[i] = first + i;
  return s;
}

/// Plain-text table with one row per method and one column per task.
inline std::string format_comparison(const std::vector<TaskComparison>& tasks) {
  std::ostringstream o;
  auto cell = [](const MeanStd& m) {
    char buf[64];
    if (m.stddev)
      std::snprintf(buf, sizeof buf, "%.3f (%.3f)", m.mean, *m.stddev);
    else
      std::snprintf(buf, sizeof buf, "%.3f", m.mean);
    return std::string(buf);
  };
  char line[256];
  std::snprintf(line, sizeof line, "%-18s", "method");
  o << line;
  for (const auto& t : tasks) {
    std::snprintf(line, sizeof line, "  %-16s %-16s", (std::string(to_string(t.task)) + " acc").c_str(), "reference");
    o << line;
  }
  o << '\n';
  const std::vector<std::pair<std::string, std::function<double(const SeedResult&)>>> methods{
      {"ERM", [](const SeedResult& s) { return s.erm.accuracy; }},
      {"Ours (lambda=0)", [](const SeedResult& s) { return s.unregularized.accuracy; }},
      {"Ours", [](const SeedResult& s) { return s.ours.accuracy; }},
  };
  for (const auto& [name, metric] : methods) {
    std::snprintf(line, sizeof line, "%-18s", name.c_str());
    o << line;
    for (const auto& t : tasks) {
      const auto ref = reference_accuracy(t.task, name);
      char r[64] = "-";
      if (ref) std::snprintf(r, sizeof r, "%.3f (%.3f)", ref->mean, ref->stddev);
      std::snprintf(line, sizeof line, "  %-16s %-16s", cell(summarize(t, metric)).c_str(), r);
      o << line;
    }
    o << '\n';
  }
  return o.str();
}

}  // namespace latent_shift
