#include <gtest/gtest.h>

#include <filesystem>

#include "latent_shift/io.hpp"

using namespace latent_shift;

namespace {

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.n_samples = 600;
  c.nz_max = 2;
  c.epochs_latent = 3;
  c.epochs_moe = 2;
  c.restarts = 1;
  c.lambda_grid = {0.0, 0.1};
  c.standardize = true;
  return c;
}

struct Trained {
  TaskData data;
  TrainedModel model;
};

const Trained& trained() {
  static const Trained t = [] {
    const auto c = tiny();
    auto d = make_synthetic_task(c, 4);
    auto m = train_pipeline(d.train.observed, d.val.observed, c).ours;
    return Trained{std::move(d), std::move(m)};
  }();
  return t;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("latent_shift_test_" + name)).string();
}

}  // namespace

TEST(JsonMatrix, RoundTripAndShapeChecks) {
  Matrix m(2, 3);
  m << 0.1, -2.5, 1e-300, 3.0, 1.0 / 3.0, 7;
  EXPECT_EQ(matrix_from_json(matrix_to_json(m)), m);
  Vector v(3);
  v << 0.2, 0.30000000000000004, -1;
  EXPECT_EQ(vector_from_json(vector_to_json(v)), v);
  EXPECT_THROW(matrix_from_json(Json::parse(R"({"rows": 2, "cols": 2, "data": [1, 2, 3]})")), ParseError);
  EXPECT_THROW(matrix_from_json(Json::parse(R"({"rows": 1, "cols": 2, "data": [1, "a"]})")), ParseError);
  EXPECT_THROW(matrix_from_json(Json::parse(R"({"rows": 1, "data": [1]})")), ParseError);
  EXPECT_THROW(vector_from_json(Json::parse("{\"a\": 1}")), ParseError);
}

TEST(ModelFile, SaveLoadGivesIdenticalPredictions) {
  const auto& t = trained();
  const auto path = temp_path("model.json");
  save_model(path, t.model);
  const auto back = load_model(path);
  std::filesystem::remove(path);

  EXPECT_EQ(back.decoder.entries, t.model.decoder.entries);
  EXPECT_EQ(back.standardizer.mean, t.model.standardizer.mean);
  ASSERT_TRUE(back.moe.reference);
  EXPECT_EQ(back.moe.reference->joint, t.model.moe.reference->joint);
  const auto a = evaluate_model(t.model, t.data.test.observed);
  const auto b = evaluate_model(back, t.data.test.observed);
  EXPECT_EQ(a.probabilities, b.probabilities);
  EXPECT_EQ(a.weights.ratios, b.weights.ratios);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(model_to_json(back), model_to_json(t.model));
}

TEST(ModelFile, RejectsWrongKindVersionAndShapes) {
  const Json good = model_to_json(trained().model);
  auto expect_parse_error = [](const Json& j, const std::string& needle) {
    try {
      model_from_json(j);
      ADD_FAILURE() << "accepted: " << needle;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  Json j = good;
  j["format_version"] = 2;
  expect_parse_error(j, "unsupported format_version 2");
  j = good;
  j["kind"] = kEvaluationKind;
  expect_parse_error(j, "not a model");
  j = good;
  j["n_z"] = good["n_z"].get<int>() + 1;
  expect_parse_error(j, "inconsistent shapes");
  j = good;
  j["latent_target"] = "label";
  expect_parse_error(j, "latent_target");
  j = good;
  j.erase("decoder");
  EXPECT_THROW(model_from_json(j), ParseError);
  EXPECT_THROW(parse_json("{not json", "model.json"), ParseError);
  EXPECT_THROW(load_model(temp_path("missing.json")), IoError);
}

TEST(LatentReport, RoundTrip) {
  LatentFitReport r;
  r.chosen_nz = 3;
  r.chosen_lambda = 0.01;
  r.val_reconstruction_loss_by_nz = {{1, 1.79}, {2, 1.53}, {3, 1.33}, {4, 1.334}};
  r.val_reconstruction_loss_by_lambda = {{0.001, 1.331}, {0.01, 1.329}};
  r.final_val_loss = 1.329;
  r.epochs_run = 41;
  r.warnings = {"something"};
  const Json j = latent_report_to_json(r);
  EXPECT_FALSE(j["unregularized"].get<bool>());
  const auto back = latent_report_from_json(j);
  EXPECT_EQ(back.chosen_nz, 3);
  EXPECT_EQ(back.val_reconstruction_loss_by_nz, r.val_reconstruction_loss_by_nz);
  EXPECT_EQ(back.val_reconstruction_loss_by_lambda, r.val_reconstruction_loss_by_lambda);
  EXPECT_EQ(back.warnings, r.warnings);
  r.chosen_lambda = 0.0;
  EXPECT_TRUE(latent_report_to_json(r)["unregularized"].get<bool>());
}

TEST(EvaluationReport, BuiltReportsValidate) {
  const auto& t = trained();
  const auto e = evaluate_model(t.model, t.data.test.observed);
  const EvaluationRecord rec{4, e, t.model.latent_report.chosen_nz, t.model.latent_report.chosen_lambda};
  const Json one = evaluation_report({rec}, 1.5);
  EXPECT_NO_THROW(validate_evaluation_report(one));
  EXPECT_TRUE(one["accuracy"]["std"].is_null());
  const Json two = evaluation_report({rec, rec}, 2.0);
  EXPECT_NO_THROW(validate_evaluation_report(two));
  EXPECT_DOUBLE_EQ(two["accuracy"]["std"].get<double>(), 0.0);
  EXPECT_THROW(evaluation_report({}, 0.0), ValidationError);
}

TEST(EvaluationReport, MalformedReportsRejected) {
  const auto& t = trained();
  const EvaluationRecord rec{4, evaluate_model(t.model, t.data.test.observed), 2, 0.1};
  const Json good = evaluation_report({rec}, 1.0);
  auto reject = [](Json j) { EXPECT_THROW(validate_evaluation_report(j), ValidationError) << j.dump(); };
  Json j = good;
  j["accuracy"]["mean"] = 1.5;
  reject(j);
  j = good;
  j["accuracy"]["std"] = 0.1;
  reject(j);
  j = good;
  j["per_seed_results"] = Json::array();
  reject(j);
  j = good;
  j["per_seed_results"][0]["chosen_nz"] = 0;
  reject(j);
  j = good;
  j["per_seed_results"][0]["shift_weights"]["ratios"] = "1,1";
  reject(j);
  j = good;
  j["kind"] = kModelKind;
  reject(j);
  j = good;
  j.erase("wall_time_seconds");
  reject(j);
  reject(Json::array());
}

TEST(ComparisonReport, CarriesPerSeedAndReference) {
  TaskComparison t;
  SeedResult s;
  s.seed = 7;
  s.ours.accuracy = 0.9;
  s.ours.weights = ShiftWeights::identity(Vector::Constant(3, 1.0 / 3.0));
  s.unregularized.weights = s.ours.weights;
  s.report.chosen_nz = 3;
  s.decoder_error = std::numeric_limits<double>::quiet_NaN();
  t.seeds = {s};
  const Json j = comparison_report({t});
  EXPECT_EQ(j["kind"], kComparisonKind);
  const auto& task = j["tasks"][0];
  EXPECT_EQ(task["task"], "proxy");
  EXPECT_DOUBLE_EQ(task["accuracy"]["Ours"]["mean"].get<double>(), 0.9);
  EXPECT_DOUBLE_EQ(task["reference_accuracy"]["Ours"]["mean"].get<double>(), 0.896);
  EXPECT_TRUE(task["per_seed_results"][0]["decoder_error"].is_null());
  EXPECT_EQ(task["per_seed_results"][0]["ours"]["chosen_nz"], 3);
}
