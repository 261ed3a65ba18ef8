// latent_shift: generate data, train, evaluate, reproduce the synthetic
// comparison, and run the discrete identifiability checks.
//
// Exit codes: 0 success, 1 usage, 2 data, 3 training, 4 verification.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "latent_shift/dataset.hpp"
#include "latent_shift/errors.hpp"
#include "latent_shift/experiment.hpp"
#include "latent_shift/io.hpp"
#include "latent_shift/oracles.hpp"

namespace fs = std::filesystem;
using namespace latent_shift;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kTraining = 3, kVerification = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string task;
  std::string train_path, val_path, test_path;
  std::vector<std::string> model_paths;
  std::size_t seed_count = 5;
  bool corrupt_variance = false;
};

ExperimentConfig resolve_config(const Options& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) {
    try {
      c = load_config(o.config_path);
    } catch (const ParseError& e) {
      throw UsageError(o.config_path + ": " + e.what());
    } catch (const IoError& e) {
      throw UsageError(e.what());
    }
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.task.empty()) {
    try {
      c.task = parse_task(o.task);
    } catch (const ValidationError& e) {
      throw UsageError(e.what());
    }
  }
  try {
    validate(c);
  } catch (const ValidationError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return c;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

/// Roles from the config when given, otherwise the column names the
/// generator writes (y, s, u, z), each used only if the header has it.
CsvSchema schema_for(const std::string& path, const ExperimentConfig& c) {
  if (!c.csv.features.empty() || c.csv.label || c.csv.proxy || c.csv.source || c.csv.latent) return c.csv;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string header;
  std::getline(in, header);
  std::vector<std::string> cols;
  for (const auto& f : detail::split_csv_line(header)) cols.emplace_back(detail::trim(f));
  auto has = [&](const char* n) { return std::find(cols.begin(), cols.end(), n) != cols.end(); };
  CsvSchema s;
  if (has("y")) s.label = "y";
  if (has("s")) s.proxy = "s";
  if (has("u")) s.source = "u";
  if (has("z")) s.latent = "z";
  return s;
}

int cmd_generate(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  if (c.task == TaskKind::csv) throw UsageError("generate supports the proxy and multisource tasks");
  ensure_dir(o.out);
  const TaskData data = make_synthetic_task(c, c.seed);
  const std::string train = join_path(o.out, "train.csv"), val = join_path(o.out, "val.csv"), test = join_path(o.out, "test.csv");
  write_csv(train, data.train);
  write_csv(val, data.val);
  write_csv(test, data.test);
  Json manifest{{"format_version", kFormatVersion},
                {"kind", "latent_shift.dataset"},
                {"task", to_string(c.task)},
                {"seed", c.seed},
                {"config", to_text(c)},
                {"files", {{"train", "train.csv"}, {"val", "val.csv"}, {"test", "test.csv"}}},
                {"rows", {{"train", data.train.rows()}, {"val", data.val.rows()}, {"test", data.test.rows()}}},
                {"columns", {{"features", data.train.observed.feature_names}, {"label", "y"}, {"proxy", "s"}, {"source", "u"}, {"latent", "z"}}}};
  write_text(join_path(o.out, "manifest.json"), manifest.dump(1) + "\n");
  std::printf("wrote %s, %s, %s (%lld / %lld / %lld rows)\n", train.c_str(), val.c_str(), test.c_str(),
              static_cast<long long>(data.train.rows()), static_cast<long long>(data.val.rows()),
              static_cast<long long>(data.test.rows()));
  return kOk;
}

int cmd_train(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  if (o.train_path.empty()) throw UsageError("train needs --train");
  ensure_dir(o.out);
  TabularDataset train = load_csv(o.train_path, schema_for(o.train_path, c));
  TabularDataset val;
  if (!o.val_path.empty()) {
    val = load_csv(o.val_path, schema_for(o.val_path, c));
  } else {
    auto [tr, va] = split_train_val(train, c.val_fraction, c.seed);
    train = std::move(tr);
    val = std::move(va);
  }
  const auto t0 = std::chrono::steady_clock::now();
  const TrainOutcome trained = train_pipeline(train.observed, val.observed, c);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string model_path = join_path(o.out, "model.json");
  save_model(model_path, trained.ours);
  Json report = latent_report_to_json(trained.ours.latent_report);
  report["format_version"] = kFormatVersion;
  report["kind"] = kLatentReportKind;
  report["seed"] = c.seed;
  report["wall_time_seconds"] = secs;
  write_text(join_path(o.out, "latent_report.json"), report.dump(1) + "\n");
  const auto& r = trained.ours.latent_report;
  std::printf("n_z = %d, lambda = %g, validation reconstruction loss %.5f\n", r.chosen_nz, r.chosen_lambda, r.final_val_loss);
  for (const auto& [k, v] : r.val_reconstruction_loss_by_nz) std::printf("  n_z %d: %.5f\n", k, v);
  for (const auto& w : r.warnings) std::printf("warning: %s\n", w.c_str());
  std::printf("model written to %s (%.1f s)\n", model_path.c_str(), secs);
  return kOk;
}

int cmd_evaluate(const Options& o) {
  if (o.model_paths.empty() || o.test_path.empty()) throw UsageError("evaluate needs --model and --test");
  ExperimentConfig c;
  if (!o.config_path.empty()) c = resolve_config(o);
  const TabularDataset test = load_csv(o.test_path, schema_for(o.test_path, c));
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<EvaluationRecord> runs;
  for (std::size_t i = 0; i < o.model_paths.size(); ++i) {
    const TrainedModel model = load_model(o.model_paths[i]);
    EvaluationRecord rec;
    rec.seed = (o.seed ? *o.seed : 0) + i;
    rec.evaluation = evaluate_model(model, test.observed);
    rec.chosen_nz = model.latent_report.chosen_nz;
    rec.chosen_lambda = model.latent_report.chosen_lambda;
    runs.push_back(rec);
    const auto& e = rec.evaluation;
    std::printf("%s: accuracy %.4f, AUC %.4f (unadapted %.4f / %.4f)%s\n", o.model_paths[i].c_str(), e.accuracy, e.auc,
                e.unadapted_accuracy, e.unadapted_auc, e.fallback ? ", shift estimation fell back to w = 1" : "");
    std::printf("  implied test P(Z):");
    for (Index z = 0; z < e.weights.test_marginal_implied.size(); ++z) std::printf(" %.3f", e.weights.test_marginal_implied(z));
    std::printf("\n");
  }
  const Json report = evaluation_report(runs, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  validate_evaluation_report(report);
  ensure_dir(o.out);
  write_text(join_path(o.out, "evaluation.json"), report.dump(1) + "\n");
  return kOk;
}

int cmd_reproduce(const Options& o) {
  ExperimentConfig base = resolve_config(o);
  std::vector<TaskKind> tasks;
  if (o.task.empty() || o.task == "all") {
    tasks = {TaskKind::proxy, TaskKind::multisource};
  } else if (base.task == TaskKind::csv) {
    throw UsageError("reproduce runs the synthetic tasks only");
  } else {
    tasks = {base.task};
  }
  const auto seeds = seed_range(base.seed, o.seed_count);
  std::vector<TaskComparison> results;
  for (TaskKind t : tasks) {
    ExperimentConfig c = base;
    c.task = t;
    std::printf("== %s task, seeds %llu..%llu\n", to_string(t), static_cast<unsigned long long>(seeds.front()),
                static_cast<unsigned long long>(seeds.back()));
    std::fflush(stdout);
    results.push_back(compare_on_task(c, seeds, [](const SeedResult& r) {
      std::printf("  seed %llu: ERM %.4f, Ours(lambda=0) %.4f, Ours %.4f (n_z %d, lambda %g, %.1f s)\n",
                  static_cast<unsigned long long>(r.seed), r.erm.accuracy, r.unregularized.accuracy, r.ours.accuracy,
                  r.report.chosen_nz, r.report.chosen_lambda, r.wall_time_seconds);
      std::fflush(stdout);
    }));
  }
  const std::string table = format_comparison(results);
  std::printf("\n%s", table.c_str());
  ensure_dir(o.out);
  write_text(join_path(o.out, "comparison.txt"), table);
  write_text(join_path(o.out, "comparison.json"), comparison_report(results).dump(1) + "\n");
  return kOk;
}

int cmd_verify(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const VerificationSummary s =
      o.corrupt_variance ? run_verification_suite(truncated_variance_regularizer) : run_verification_suite();
  for (const auto& r : s.rows)
    std::printf("%-4s %-22s %-38s %s\n", r.passed ? "PASS" : "FAIL", r.check.c_str(), r.instance.c_str(), r.detail.c_str());
  std::printf("%s (%.1f s)\n", s.all_passed() ? "all checks passed" : "some checks failed",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return s.all_passed() ? kOk : kVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confounder-shift adaptation with a latent posterior gate"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--out", o.out, "output directory");
  };

  auto* gen = app.add_subcommand("generate", "write train/val/test CSVs for a synthetic task");
  add_common(gen);
  gen->add_option("--task", o.task, "proxy or multisource");

  auto* train = app.add_subcommand("train", "fit the latent posterior and the mixture of experts");
  add_common(train);
  train->add_option("--task", o.task, "proxy, multisource or csv");
  train->add_option("--train", o.train_path, "training CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--val", o.val_path, "validation CSV (split from --train when absent)")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("evaluate", "adapt to a test CSV and report accuracy and AUC");
  add_common(eval);
  eval->add_option("--model", o.model_paths, "model document (repeat for several seeds)")->required()->check(CLI::ExistingFile);
  eval->add_option("--test", o.test_path, "test CSV")->required()->check(CLI::ExistingFile);

  auto* repro = app.add_subcommand("reproduce", "ERM vs. the adapted mixture on both synthetic tasks");
  add_common(repro);
  repro->add_option("--task", o.task, "proxy, multisource or all (default)");
  repro->add_option("--seeds", o.seed_count, "number of consecutive seeds")->check(CLI::PositiveNumber);

  auto* verify = app.add_subcommand("verify", "brute-force identifiability checks on small discrete models");
  verify->add_flag("--corrupt-variance", o.corrupt_variance, "use a variance function that skips the last row");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return e.get_exit_code() == 0 ? code : kUsage;
  }

  try {
    if (*gen) return cmd_generate(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_evaluate(o);
    if (*repro) return cmd_reproduce(o);
    if (*verify) return cmd_verify(o);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "training error: %s\n", e.what());
    return kTraining;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const Error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
