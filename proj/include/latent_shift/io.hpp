#pragma once

// JSON documents: the trained model, latent-fit reports, evaluation and
// comparison reports. Matrices are stored as {rows, cols, data} with data in
// row-major order. Doubles are written in shortest round-trip form, so a
// saved model reloads bit-identically.

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latent_shift/errors.hpp"
#include "latent_shift/experiment.hpp"
#include "latent_shift/latent.hpp"
#include "latent_shift/moe.hpp"
#include "latent_shift/nn.hpp"
#include "latent_shift/shift.hpp"

namespace latent_shift {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kModelKind = "latent_shift.model";
inline constexpr const char* kEvaluationKind = "latent_shift.evaluation";
inline constexpr const char* kComparisonKind = "latent_shift.comparison";
inline constexpr const char* kLatentReportKind = "latent_shift.latent_report";

namespace detail {

inline const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(std::string("document is missing field '") + key + "'", 0);
  return j.at(key);
}

template <class T>
T get(const Json& j, const char* key) {
  try {
    return field(j, key).get<T>();
  } catch (const Json::exception& e) {
    throw ParseError(std::string("field '") + key + "': " + e.what(), 0);
  }
}

}  // namespace detail

inline Json matrix_to_json(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Matrix matrix_from_json(const Json& j) {
  const auto rows = detail::get<Index>(j, "rows");
  const auto cols = detail::get<Index>(j, "cols");
  const auto data = detail::get<std::vector<double>>(j, "data");
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw ParseError("matrix shape " + std::to_string(rows) + "x" + std::to_string(cols) + " does not match " +
                     std::to_string(data.size()) + " values", 0);
  }
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

inline Json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw ParseError("expected an array of numbers", 0);
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

inline Json layer_to_json(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> Json {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) {
          return {{"type", "dense"},
                  {"name", l.name},
                  {"activation", l.activation == Activation::relu ? "relu" : "identity"},
                  {"weights", matrix_to_json(l.weights)},
                  {"biases", vector_to_json(l.biases)}};
        } else {
          return {{"type", "batch_norm"},         {"name", l.name},
                  {"gamma", vector_to_json(l.gamma)}, {"beta", vector_to_json(l.beta)},
                  {"running_mean", vector_to_json(l.running_mean)}, {"running_var", vector_to_json(l.running_var)},
                  {"momentum", l.momentum},       {"epsilon", l.epsilon}};
        }
      },
      layer);
}

inline DenseLayer dense_from_json(const Json& j) {
  DenseLayer d;
  d.name = detail::get<std::string>(j, "name");
  const auto act = detail::get<std::string>(j, "activation");
  if (act == "relu")
    d.activation = Activation::relu;
  else if (act == "identity")
    d.activation = Activation::identity;
  else
    throw ParseError("unknown activation '" + act + "'", 0);
  d.weights = matrix_from_json(detail::field(j, "weights"));
  d.biases = vector_from_json(detail::field(j, "biases"));
  if (d.biases.size() != d.weights.rows()) throw ParseError("layer '" + d.name + "' has mismatched bias length", 0);
  return d;
}

inline Layer layer_from_json(const Json& j) {
  const auto type = detail::get<std::string>(j, "type");
  if (type == "dense") return dense_from_json(j);
  if (type != "batch_norm") throw ParseError("unknown layer type '" + type + "'", 0);
  BatchNormLayer b(detail::get<std::string>(j, "name"), 0);
  b.gamma = vector_from_json(detail::field(j, "gamma"));
  b.beta = vector_from_json(detail::field(j, "beta"));
  b.running_mean = vector_from_json(detail::field(j, "running_mean"));
  b.running_var = vector_from_json(detail::field(j, "running_var"));
  b.momentum = detail::get<double>(j, "momentum");
  b.epsilon = detail::get<double>(j, "epsilon");
  const Index n = b.gamma.size();
  if (b.beta.size() != n || b.running_mean.size() != n || b.running_var.size() != n) {
    throw ParseError("batch-norm layer '" + b.name + "' has mismatched vector lengths", 0);
  }
  b.mode = BatchNormMode::eval;
  return b;
}

inline Json sequential_to_json(const Sequential& s) {
  Json layers = Json::array();
  for (const auto& l : s.layers()) layers.push_back(layer_to_json(l));
  return {{"layers", layers}};
}

inline Sequential sequential_from_json(const Json& j) {
  std::vector<Layer> layers;
  for (const auto& l : detail::field(j, "layers")) layers.push_back(layer_from_json(l));
  if (layers.empty()) throw ParseError("network has no layers", 0);
  Index width = -1;
  for (const auto& l : layers) {
    const auto [in, out] = std::visit(
        [](const auto& x) -> std::pair<Index, Index> {
          if constexpr (std::is_same_v<std::decay_t<decltype(x)>, DenseLayer>)
            return {x.in_dim(), x.out_dim()};
          else
            return {x.width(), x.width()};
        },
        l);
    if (width >= 0 && in != width) throw ParseError("network layers have mismatched widths", 0);
    width = out;
  }
  return Sequential(std::move(layers));
}

inline Json latent_report_to_json(const LatentFitReport& r) {
  Json by_nz = Json::object(), by_lambda = Json::array();
  for (const auto& [k, v] : r.val_reconstruction_loss_by_nz) by_nz[std::to_string(k)] = v;
  for (const auto& [l, v] : r.val_reconstruction_loss_by_lambda) by_lambda.push_back({{"lambda", l}, {"loss", v}});
  return {{"chosen_nz", r.chosen_nz},
          {"chosen_lambda", r.chosen_lambda},
          {"unregularized", r.chosen_lambda == 0.0},
          {"val_reconstruction_loss_by_nz", by_nz},
          {"val_reconstruction_loss_by_lambda", by_lambda},
          {"final_val_loss", r.final_val_loss},
          {"epochs_run", r.epochs_run},
          {"no_elbow", r.no_elbow},
          {"warnings", r.warnings}};
}

inline LatentFitReport latent_report_from_json(const Json& j) {
  LatentFitReport r;
  r.chosen_nz = detail::get<int>(j, "chosen_nz");
  r.chosen_lambda = detail::get<double>(j, "chosen_lambda");
  for (const auto& [k, v] : detail::field(j, "val_reconstruction_loss_by_nz").items()) r.val_reconstruction_loss_by_nz[std::stoi(k)] = v.get<double>();
  for (const auto& e : detail::field(j, "val_reconstruction_loss_by_lambda"))
    r.val_reconstruction_loss_by_lambda[detail::get<double>(e, "lambda")] = detail::get<double>(e, "loss");
  r.final_val_loss = detail::get<double>(j, "final_val_loss");
  r.epochs_run = detail::get<int>(j, "epochs_run");
  r.no_elbow = detail::get<bool>(j, "no_elbow");
  r.warnings = detail::get<std::vector<std::string>>(j, "warnings");
  return r;
}

inline Json model_to_json(const TrainedModel& m) {
  Json j{{"format_version", kFormatVersion},
         {"kind", kModelKind},
         {"input_dim", m.moe.input_dim()},
         {"n_z", m.moe.head_count()},
         {"latent_target", to_string(m.target)},
         {"gating", sequential_to_json(m.moe.gating.network)},
         {"trunk", sequential_to_json(m.moe.trunk)},
         {"experts", layer_to_json(m.moe.experts)},
         {"decoder", matrix_to_json(m.decoder.entries)},
         {"latent_report", latent_report_to_json(m.latent_report)}};
  j["standardizer"] = m.standardizer.empty()
                          ? Json(nullptr)
                          : Json{{"mean", vector_to_json(m.standardizer.mean)}, {"scale", vector_to_json(m.standardizer.scale)}};
  if (m.moe.reference) {
    j["reference"] = {{"joint", matrix_to_json(m.moe.reference->joint)},
                      {"train_marginal", vector_to_json(m.moe.reference->train_marginal)},
                      {"predictor", m.moe.reference->predictor}};
  } else {
    j["reference"] = nullptr;
  }
  return j;
}

inline TrainedModel model_from_json(const Json& j) {
  if (detail::get<std::string>(j, "kind") != kModelKind) throw ParseError("not a model document", 0);
  const int version = detail::get<int>(j, "format_version");
  if (version != kFormatVersion) throw ParseError("unsupported format_version " + std::to_string(version), 0);
  TrainedModel m;
  const auto target = detail::get<std::string>(j, "latent_target");
  if (target != "proxy" && target != "source_id") throw ParseError("unknown latent_target '" + target + "'", 0);
  m.target = target == "proxy" ? LatentTarget::proxy : LatentTarget::source_id;
  m.moe.gating.network = sequential_from_json(detail::field(j, "gating"));
  m.moe.gating.network.set_batch_norm_mode(BatchNormMode::eval);
  m.moe.trunk = sequential_from_json(detail::field(j, "trunk"));
  const Layer experts = layer_from_json(detail::field(j, "experts"));
  if (!std::holds_alternative<DenseLayer>(experts)) throw ParseError("experts must be a dense layer", 0);
  m.moe.experts = std::get<DenseLayer>(experts);
  m.decoder.entries = matrix_from_json(detail::field(j, "decoder"));
  m.latent_report = latent_report_from_json(detail::field(j, "latent_report"));
  if (const auto& s = detail::field(j, "standardizer"); !s.is_null()) {
    m.standardizer.mean = vector_from_json(detail::field(s, "mean"));
    m.standardizer.scale = vector_from_json(detail::field(s, "scale"));
    if (m.standardizer.mean.size() != m.standardizer.scale.size()) throw ParseError("standardizer lengths differ", 0);
  }
  if (const auto& r = detail::field(j, "reference"); !r.is_null()) {
    ConfusionEstimate c;
    c.joint = matrix_from_json(detail::field(r, "joint"));
    c.train_marginal = vector_from_json(detail::field(r, "train_marginal"));
    c.predictor = detail::get<std::string>(r, "predictor");
    m.moe.reference = c;
  }

  const Index n_z = m.moe.gating.output_dim();
  const auto declared_dim = detail::get<Index>(j, "input_dim");
  const auto declared_nz = detail::get<Index>(j, "n_z");
  if (m.moe.trunk.out_dim() != m.moe.experts.in_dim() || m.moe.experts.out_dim() != n_z ||
      m.moe.gating.input_dim() != m.moe.trunk.in_dim() || declared_dim != m.moe.trunk.in_dim() || declared_nz != n_z ||
      m.decoder.entries.rows() != n_z ||
      (!m.standardizer.empty() && m.standardizer.mean.size() != declared_dim) ||
      (m.moe.reference && (m.moe.reference->joint.rows() != n_z || m.moe.reference->joint.cols() != n_z))) {
    throw ParseError("model document has inconsistent shapes", 0);
  }
  return m;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(what + ": " + e.what(), 0);
  }
}

inline void save_model(const std::string& path, const TrainedModel& m) { write_text(path, model_to_json(m).dump(1) + "\n"); }

inline TrainedModel load_model(const std::string& path) { return model_from_json(parse_json(read_text(path), path)); }

// ---------------------------------------------------------------------------
// Reports

inline Json shift_weights_to_json(const ShiftWeights& w) {
  return {{"ratios", vector_to_json(w.ratios)},
          {"train_marginal", vector_to_json(w.train_marginal)},
          {"test_marginal_implied", vector_to_json(w.test_marginal_implied)}};
}

inline Json mean_std_to_json(const MeanStd& m) {
  return {{"mean", m.mean}, {"std", m.stddev ? Json(*m.stddev) : Json(nullptr)}};
}

/// Evaluation of one or more trained models on a test file.
struct EvaluationRecord {
  std::uint64_t seed = 0;
  Evaluation evaluation;
  int chosen_nz = 0;
  double chosen_lambda = 0.0;
};

inline Json evaluation_to_json(const EvaluationRecord& r) {
  const auto& e = r.evaluation;
  return {{"seed", r.seed},
          {"accuracy", e.accuracy},
          {"auc", e.auc},
          {"unadapted_accuracy", e.unadapted_accuracy},
          {"unadapted_auc", e.unadapted_auc},
          {"shift_weights", shift_weights_to_json(e.weights)},
          {"fallback", e.fallback},
          {"fallback_reason", e.fallback_reason},
          {"mean_abs_adaptation", e.mean_abs_adaptation},
          {"chosen_nz", r.chosen_nz},
          {"chosen_lambda", r.chosen_lambda}};
}

inline Json evaluation_report(const std::vector<EvaluationRecord>& runs, double wall_time_seconds) {
  if (runs.empty()) throw ValidationError("evaluation report needs at least one run");
  Json per = Json::array();
  std::vector<double> acc, auc;
  for (const auto& r : runs) {
    per.push_back(evaluation_to_json(r));
    acc.push_back(r.evaluation.accuracy);
    auc.push_back(r.evaluation.auc);
  }
  const auto& first = runs.front();
  return {{"format_version", kFormatVersion},
          {"kind", kEvaluationKind},
          {"accuracy", mean_std_to_json(mean_std(acc))},
          {"auc", mean_std_to_json(mean_std(auc))},
          {"shift_weights", shift_weights_to_json(first.evaluation.weights)},
          {"fallback", first.evaluation.fallback},
          {"chosen_nz", first.chosen_nz},
          {"chosen_lambda", first.chosen_lambda},
          {"wall_time_seconds", wall_time_seconds},
          {"per_seed_results", per}};
}

inline Json comparison_report(const std::vector<TaskComparison>& tasks) {
  Json out{{"format_version", kFormatVersion}, {"kind", kComparisonKind}, {"tasks", Json::array()}};
  for (const auto& t : tasks) {
    Json seeds = Json::array();
    for (const auto& s : t.seeds) {
      seeds.push_back({{"seed", s.seed},
                       {"erm", {{"accuracy", s.erm.accuracy}, {"auc", s.erm.auc}}},
                       {"ours_unregularized", evaluation_to_json({s.seed, s.unregularized, s.unregularized_report.chosen_nz, 0.0})},
                       {"ours", evaluation_to_json({s.seed, s.ours, s.report.chosen_nz, s.report.chosen_lambda})},
                       {"latent_report", latent_report_to_json(s.report)},
                       {"decoder_error", std::isfinite(s.decoder_error) ? Json(s.decoder_error) : Json(nullptr)},
                       {"marginal_error", std::isfinite(s.marginal_error) ? Json(s.marginal_error) : Json(nullptr)},
                       {"wall_time_seconds", s.wall_time_seconds}});
    }
    Json methods = Json::object();
    methods["ERM"] = mean_std_to_json(summarize(t, [](const SeedResult& s) { return s.erm.accuracy; }));
    methods["Ours (lambda=0)"] = mean_std_to_json(summarize(t, [](const SeedResult& s) { return s.unregularized.accuracy; }));
    methods["Ours"] = mean_std_to_json(summarize(t, [](const SeedResult& s) { return s.ours.accuracy; }));
    Json reference = Json::object();
    for (const char* m : {"ERM", "Ours (lambda=0)", "Ours"})
      if (auto r = reference_accuracy(t.task, m)) reference[m] = {{"mean", r->mean}, {"std", r->stddev}};
    out["tasks"].push_back({{"task", to_string(t.task)},
                            {"labeled_source", t.labeled_source},
                            {"accuracy", methods},
                            {"reference_accuracy", reference},
                            {"wall_time_seconds", t.wall_time_seconds},
                            {"per_seed_results", seeds}});
  }
  return out;
}

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError("report: " + msg);
}

inline void require_unit(const Json& j, const char* key, const std::string& where) {
  require(j.contains(key) && j.at(key).is_number(), where + "." + key + " must be a number");
  const double v = j.at(key).get<double>();
  require(v >= 0.0 && v <= 1.0, where + "." + key + " must lie in [0, 1]");
}

inline void require_number_array(const Json& j, const char* key, const std::string& where) {
  require(j.contains(key) && j.at(key).is_array(), where + "." + key + " must be an array");
  for (const auto& v : j.at(key)) require(v.is_number(), where + "." + key + " must hold numbers");
}

inline void validate_mean_std(const Json& j, const std::string& where, std::size_t runs) {
  require(j.is_object(), where + " must be an object");
  require_unit(j, "mean", where);
  require(j.contains("std"), where + ".std is required");
  require(runs >= 2 ? j.at("std").is_number() : j.at("std").is_null(), where + ".std is present exactly when there are two or more runs");
}

inline void validate_run(const Json& r, const std::string& where) {
  require(r.is_object(), where + " must be an object");
  require(r.contains("seed") && r.at("seed").is_number_unsigned(), where + ".seed must be a nonnegative integer");
  for (const char* k : {"accuracy", "auc", "unadapted_accuracy", "unadapted_auc"}) require_unit(r, k, where);
  require(r.contains("fallback") && r.at("fallback").is_boolean(), where + ".fallback must be a boolean");
  require(r.contains("shift_weights") && r.at("shift_weights").is_object(), where + ".shift_weights must be an object");
  for (const char* k : {"ratios", "train_marginal", "test_marginal_implied"}) require_number_array(r.at("shift_weights"), k, where + ".shift_weights");
  require(r.contains("chosen_nz") && r.at("chosen_nz").is_number_integer() && r.at("chosen_nz").get<int>() >= 1,
          where + ".chosen_nz must be a positive integer");
  require(r.contains("chosen_lambda") && r.at("chosen_lambda").is_number() && r.at("chosen_lambda").get<double>() >= 0.0,
          where + ".chosen_lambda must be nonnegative");
}

}  // namespace detail

/// Structural check of an evaluation report; mirrors docs/evaluation_report.schema.json.
inline void validate_evaluation_report(const Json& j) {
  using detail::require;
  require(j.is_object(), "document must be an object");
  require(j.value("format_version", -1) == kFormatVersion, "format_version must be " + std::to_string(kFormatVersion));
  require(j.value("kind", std::string()) == kEvaluationKind, std::string("kind must be ") + kEvaluationKind);
  require(j.contains("per_seed_results") && j.at("per_seed_results").is_array() && !j.at("per_seed_results").empty(),
          "per_seed_results must be a nonempty array");
  const auto runs = j.at("per_seed_results").size();
  for (std::size_t i = 0; i < runs; ++i) detail::validate_run(j.at("per_seed_results")[i], "per_seed_results[" + std::to_string(i) + "]");
  detail::validate_mean_std(j.value("accuracy", Json()), "accuracy", runs);
  detail::validate_mean_std(j.value("auc", Json()), "auc", runs);
  require(j.contains("fallback") && j.at("fallback").is_boolean(), "fallback must be a boolean");
  require(j.contains("wall_time_seconds") && j.at("wall_time_seconds").is_number() && j.at("wall_time_seconds").get<double>() >= 0.0,
          "wall_time_seconds must be nonnegative");
  require(j.contains("shift_weights") && j.at("shift_weights").is_object(), "shift_weights must be an object");
}

}  // namespace latent_shift
