#pragma once

// Tabular data carrier, the two synthetic confounder-shift generators, CSV
// ingestion and train/validation splitting.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "latent_shift/errors.hpp"
#include "latent_shift/nn.hpp"
#include "latent_shift/random.hpp"

namespace latent_shift {

/// Marker for an absent label in a partially labeled column.
inline constexpr int kMissing = -1;

struct CategoricalColumn {
  std::vector<int> ids;
  int cardinality = 0;
  /// Original CSV level for each id; empty for generated data.
  std::vector<std::string> levels;

  std::size_t size() const { return ids.size(); }
};

/// Everything a learner may look at: covariates and the observed discrete
/// columns. The latent truth lives outside this type so that training and
/// adaptation code cannot reach it.
struct ObservedTable {
  Matrix features;  // N x d
  std::vector<std::string> feature_names;
  std::optional<CategoricalColumn> labels;  // may contain kMissing
  std::optional<CategoricalColumn> proxy;
  std::optional<CategoricalColumn> source_id;

  Index rows() const { return features.rows(); }
  Index dim() const { return features.cols(); }

  void validate() const {
    const auto n = static_cast<std::size_t>(rows());
    if (!feature_names.empty() && static_cast<Index>(feature_names.size()) != dim()) {
      throw ShapeError("feature_names has " + std::to_string(feature_names.size()) + " entries for " +
                       std::to_string(dim()) + " feature columns");
    }
    auto check = [&](const std::optional<CategoricalColumn>& col, const char* what, bool allow_missing) {
      if (!col) return;
      if (col->size() != n) {
        throw ShapeError(std::string(what) + " column has " + std::to_string(col->size()) +
                         " rows, features have " + std::to_string(n));
      }
      for (int id : col->ids) {
        if (allow_missing && id == kMissing) continue;
        if (id < 0 || id >= col->cardinality) {
          throw ValidationError(std::string(what) + " id " + std::to_string(id) + " outside [0, " +
                                std::to_string(col->cardinality) + ")");
        }
      }
    };
    check(labels, "label", true);
    check(proxy, "proxy", false);
    check(source_id, "source_id", false);
  }

  ObservedTable select_rows(std::span<const std::size_t> idx) const {
    ObservedTable out;
    out.feature_names = feature_names;
    out.features.resize(static_cast<Index>(idx.size()), dim());
    for (std::size_t i = 0; i < idx.size(); ++i) out.features.row(static_cast<Index>(i)) = features.row(static_cast<Index>(idx[i]));
    auto pick = [&](const std::optional<CategoricalColumn>& col) -> std::optional<CategoricalColumn> {
      if (!col) return std::nullopt;
      CategoricalColumn c;
      c.cardinality = col->cardinality;
      c.levels = col->levels;
      c.ids.reserve(idx.size());
      for (auto i : idx) c.ids.push_back(col->ids[i]);
      return c;
    };
    out.labels = pick(labels);
    out.proxy = pick(proxy);
    out.source_id = pick(source_id);
    return out;
  }

  std::size_t labeled_count() const {
    if (!labels) return 0;
    return static_cast<std::size_t>(std::count_if(labels->ids.begin(), labels->ids.end(),
                                                  [](int y) { return y != kMissing; }));
  }

  /// Rows whose label is present.
  ObservedTable labeled_rows() const {
    if (!labels) throw ValidationError("table has no label column");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels->ids.size(); ++i)
      if (labels->ids[i] != kMissing) idx.push_back(i);
    return select_rows(idx);
  }
};

struct TabularDataset {
  ObservedTable observed;
  /// Generator-only ground truth for Z; read by evaluation diagnostics only.
  std::optional<std::vector<int>> latent_truth;
  int latent_cardinality = 0;

  Index rows() const { return observed.rows(); }

  void validate() const {
    observed.validate();
    if (latent_truth) {
      if (static_cast<Index>(latent_truth->size()) != rows()) throw ShapeError("latent_truth length mismatch");
      for (int z : *latent_truth)
        if (z < 0 || z >= latent_cardinality) throw ValidationError("latent_truth id out of range");
    }
  }

  TabularDataset select_rows(std::span<const std::size_t> idx) const {
    TabularDataset out;
    out.observed = observed.select_rows(idx);
    out.latent_cardinality = latent_cardinality;
    if (latent_truth) {
      std::vector<int> z;
      z.reserve(idx.size());
      for (auto i : idx) z.push_back((*latent_truth)[i]);
      out.latent_truth = std::move(z);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Synthetic generators

enum class Split { train, test };

inline std::vector<double> default_proxy_channel_row(int z) {
  switch (z) {
    case 0: return {0.7, 0.3, 0.0};
    case 1: return {0.8, 0.1, 0.1};
    default: return {0.1, 0.0, 0.9};
  }
}

/// P(S|Z) of the proxy task, rows indexed by Z.
inline Matrix default_proxy_channel() {
  Matrix m(3, 3);
  for (int z = 0; z < 3; ++z) {
    const auto row = default_proxy_channel_row(z);
    for (int s = 0; s < 3; ++s) m(z, s) = row[static_cast<std::size_t>(s)];
  }
  return m;
}

inline const std::vector<double>& default_train_marginal() {
  static const std::vector<double> v{0.15, 0.35, 0.5};
  return v;
}

inline const std::vector<double>& default_test_marginal() {
  static const std::vector<double> v{0.7, 0.2, 0.1};
  return v;
}

inline const std::vector<std::vector<double>>& default_source_marginals() {
  static const std::vector<std::vector<double>> v{{0.0, 0.7, 0.3}, {0.8, 0.1, 0.1}, {0.1, 0.0, 0.9}};
  return v;
}

/// N(0, 0.2) on X1 is read as a scale of 0.2; sqrt(0.2) gives the variance reading.
inline constexpr double kDefaultX1NoiseSd = 0.2;

struct ProxyTaskSpec {
  /// Overrides the split's default P(Z) when set.
  std::optional<std::vector<double>> pz;
  Matrix ps_given_z = default_proxy_channel();
  std::size_t n_samples = 10000;
  std::uint64_t seed = 0;
  /// Standard deviation of the noise on X1.
  double x1_noise_sd = kDefaultX1NoiseSd;
};

struct MultiSourceTaskSpec {
  std::vector<std::vector<double>> pz_per_source = default_source_marginals();
  std::size_t labeled_source = 0;
  std::vector<double> pz_test = default_test_marginal();
  std::size_t n_samples_per_source = 10000;
  std::uint64_t seed = 0;
  double x1_noise_sd = kDefaultX1NoiseSd;
};

inline void require_simplex(std::span<const double> p, const std::string& what, double tol = 1e-9) {
  if (p.empty()) throw ValidationError(what + " is empty");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(what + " has a negative or non-finite entry");
    total += v;
  }
  if (std::abs(total - 1.0) > tol) throw ValidationError(what + " sums to " + std::to_string(total) + ", not 1");
}

inline void require_row_stochastic(const Matrix& m, const std::string& what, double tol = 1e-9) {
  for (Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(m.cols());
    for (Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    require_simplex(row, what + " row " + std::to_string(r), tol);
  }
}

/// Logit of P(Y=1 | X, Z) for the synthetic tasks.
inline double synthetic_logit(double x1, double x2, double x3, int z) {
  if (z == 0) return -0.6 * x1 + 2.7 * x2 + 0.6 * x3 - 0.6 * z + 1.5;
  return 1.5 * x1 + (1.2 - 6.0 * z) * x2 + 2.1 * x3 - 0.6 * z + 1.5;
}

namespace detail {

inline std::uint64_t split_seed(std::uint64_t seed, Split split, std::uint64_t salt) {
  std::uint64_t s = seed * 0x9E3779B97F4A7C15ULL + (split == Split::train ? 0x1234567ULL : 0x89ABCDEFULL) + salt;
  s ^= s >> 31;
  return s;
}

// X | Z and Y | X, Z, shared by both tasks.
inline void draw_covariates_and_label(Rng& rng, int z, double sd1, double* x, int& y) {
  const double zx = rng.normal();
  const double x1 = -zx + z + sd1 * rng.normal();
  const double x2 = 2.0 * zx + rng.normal();
  const double x3 = 3.0 * zx + rng.normal();
  x[0] = x1;
  x[1] = x2;
  x[2] = x3;
  y = rng.bernoulli(sigmoid(synthetic_logit(x1, x2, x3, z))) ? 1 : 0;
}

inline std::vector<std::string> synthetic_feature_names() { return {"x0", "x1", "x2"}; }

}  // namespace detail

inline TabularDataset generate_proxy_task(const ProxyTaskSpec& spec, Split split) {
  const std::vector<double> pz =
      spec.pz ? *spec.pz : (split == Split::train ? default_train_marginal() : default_test_marginal());
  require_simplex(pz, "P(Z)");
  if (spec.ps_given_z.rows() != static_cast<Index>(pz.size())) {
    throw ValidationError("P(S|Z) needs one row per latent class");
  }
  require_row_stochastic(spec.ps_given_z, "P(S|Z)");
  if (spec.n_samples == 0) throw ValidationError("n_samples must be positive");
  if (!(spec.x1_noise_sd >= 0.0)) throw ValidationError("x1_noise_sd must be nonnegative");

  Rng rng(detail::split_seed(spec.seed, split, 0));
  const auto n = static_cast<Index>(spec.n_samples);
  const auto n_s = static_cast<int>(spec.ps_given_z.cols());
  TabularDataset data;
  data.latent_cardinality = static_cast<int>(pz.size());
  data.observed.features.resize(n, 3);
  data.observed.feature_names = detail::synthetic_feature_names();
  CategoricalColumn labels{std::vector<int>(spec.n_samples), 2, {}};
  CategoricalColumn proxy{std::vector<int>(spec.n_samples), n_s, {}};
  std::vector<int> truth(spec.n_samples);
  std::vector<double> channel_row(static_cast<std::size_t>(n_s));
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const int z = static_cast<int>(rng.categorical(pz));
    for (int s = 0; s < n_s; ++s) channel_row[static_cast<std::size_t>(s)] = spec.ps_given_z(z, s);
    proxy.ids[k] = static_cast<int>(rng.categorical(channel_row));
    double x[3];
    detail::draw_covariates_and_label(rng, z, spec.x1_noise_sd, x, labels.ids[k]);
    for (int j = 0; j < 3; ++j) data.observed.features(i, j) = x[j];
    truth[k] = z;
  }
  data.observed.labels = std::move(labels);
  // The test split exposes covariates and labels only.
  if (split == Split::train) data.observed.proxy = std::move(proxy);
  data.latent_truth = std::move(truth);
  return data;
}

inline TabularDataset generate_multisource_task(const MultiSourceTaskSpec& spec, Split split) {
  if (spec.pz_per_source.empty()) throw ValidationError("multi-source task needs at least one source");
  if (spec.labeled_source >= spec.pz_per_source.size()) throw ValidationError("labeled_source out of range");
  if (spec.n_samples_per_source == 0) throw ValidationError("n_samples_per_source must be positive");
  if (!(spec.x1_noise_sd >= 0.0)) throw ValidationError("x1_noise_sd must be nonnegative");
  const std::size_t n_z = spec.pz_test.size();
  require_simplex(spec.pz_test, "test P(Z)");
  for (std::size_t k = 0; k < spec.pz_per_source.size(); ++k) {
    require_simplex(spec.pz_per_source[k], "source " + std::to_string(k) + " P(Z)");
    if (spec.pz_per_source[k].size() != n_z) throw ValidationError("source marginals differ in length");
  }

  Rng rng(detail::split_seed(spec.seed, split, 17));
  TabularDataset data;
  data.latent_cardinality = static_cast<int>(n_z);
  data.observed.feature_names = detail::synthetic_feature_names();
  const std::size_t n_sources = split == Split::train ? spec.pz_per_source.size() : 1;
  const std::size_t total = n_sources * spec.n_samples_per_source;
  data.observed.features.resize(static_cast<Index>(total), 3);
  CategoricalColumn labels{std::vector<int>(total), 2, {}};
  CategoricalColumn source{std::vector<int>(total), static_cast<int>(spec.pz_per_source.size()), {}};
  std::vector<int> truth(total);
  std::size_t row = 0;
  for (std::size_t k = 0; k < n_sources; ++k) {
    const auto& pz = split == Split::train ? spec.pz_per_source[k] : spec.pz_test;
    for (std::size_t i = 0; i < spec.n_samples_per_source; ++i, ++row) {
      const int z = static_cast<int>(rng.categorical(pz));
      double x[3];
      int y = 0;
      detail::draw_covariates_and_label(rng, z, spec.x1_noise_sd, x, y);
      for (int j = 0; j < 3; ++j) data.observed.features(static_cast<Index>(row), j) = x[j];
      const bool keep_label = split == Split::test || k == spec.labeled_source;
      labels.ids[row] = keep_label ? y : kMissing;
      source.ids[row] = static_cast<int>(k);
      truth[row] = z;
    }
  }
  data.observed.labels = std::move(labels);
  if (split == Split::train) data.observed.source_id = std::move(source);
  data.latent_truth = std::move(truth);
  return data;
}

// ---------------------------------------------------------------------------
// Splitting

/// Disjoint partition into (train, validation) with round(N * fraction)
/// validation rows. Row order inside each part follows the original order.
template <class Table>
std::pair<Table, Table> split_train_val(const Table& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("validation fraction must lie in (0, 1)");
  const auto n = static_cast<std::size_t>(data.rows());
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
  if (n_val == 0 || n_val >= n) {
    throw ValidationError("split of " + std::to_string(n) + " rows at fraction " + std::to_string(fraction) +
                          " leaves an empty partition");
  }
  Rng rng(seed ^ 0xA5A5A5A5DEADBEEFULL);
  auto perm = rng.permutation(n);
  std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {data.select_rows(train), data.select_rows(val)};
}

// ---------------------------------------------------------------------------
// Standardization

/// Per-column z-score fitted on one table and applied to others.
struct Standardizer {
  Vector mean;
  Vector scale;

  bool empty() const { return mean.size() == 0; }

  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    const Matrix centered = x.rowwise() - s.mean.transpose();
    const double denom = x.rows() > 1 ? static_cast<double>(x.rows() - 1) : 1.0;
    s.scale = (centered.array().square().colwise().sum() / denom).sqrt().matrix().transpose();
    for (Index j = 0; j < s.scale.size(); ++j)
      if (!(s.scale(j) > 1e-12)) s.scale(j) = 1.0;
    return s;
  }

  Matrix apply(const Matrix& x) const {
    if (empty()) return x;
    if (x.cols() != mean.size()) throw ShapeError("standardizer width mismatch");
    return ((x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix();
  }
};

// ---------------------------------------------------------------------------
// CSV

/// Column roles for load_csv. An empty feature list means "every column not
/// claimed by another role".
struct CsvSchema {
  std::vector<std::string> features;
  std::optional<std::string> label;
  std::optional<std::string> proxy;
  std::optional<std::string> source;
  std::optional<std::string> latent;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<long> parse_nonnegative_int(std::string_view s) {
  long v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty() || v < 0) return std::nullopt;
  return v;
}

/// Nonnegative integer levels keep their value as id; any other level set
/// is sorted lexicographically and numbered.
inline CategoricalColumn encode_categorical(const std::vector<std::string>& raw, bool allow_missing,
                                            const std::string& column, std::size_t first_data_line) {
  CategoricalColumn col;
  col.ids.resize(raw.size());
  std::set<std::string> distinct;
  bool all_int = true;
  long max_int = -1;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i].empty()) {
      if (!allow_missing) throw ParseError("empty value in column \"" + column + "\"", first_data_line + i);
      continue;
    }
    distinct.insert(raw[i]);
    if (auto v = parse_nonnegative_int(raw[i])) {
      max_int = std::max(max_int, *v);
    } else {
      all_int = false;
    }
  }
  std::map<std::string, int> code;
  if (all_int) {
    col.cardinality = static_cast<int>(max_int + 1);
    col.levels.resize(static_cast<std::size_t>(col.cardinality));
    for (int k = 0; k < col.cardinality; ++k) col.levels[static_cast<std::size_t>(k)] = std::to_string(k);
    for (const auto& s : distinct) code[s] = static_cast<int>(*parse_nonnegative_int(s));
  } else {
    int next = 0;
    for (const auto& s : distinct) {
      code[s] = next++;
      col.levels.push_back(s);
    }
    col.cardinality = next;
  }
  for (std::size_t i = 0; i < raw.size(); ++i) col.ids[i] = raw[i].empty() ? kMissing : code.at(raw[i]);
  return col;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Reads a UTF-8, comma-separated file with a header row.
inline TabularDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header row", 1);
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position[header[i]] = i;

  auto locate = [&](const std::string& name) {
    auto it = position.find(name);
    if (it == position.end()) throw ParseError("missing column \"" + name + "\"", 1);
    return it->second;
  };
  std::set<std::size_t> claimed;
  std::optional<std::size_t> label_col, proxy_col, source_col, latent_col;
  if (schema.label) claimed.insert(*(label_col = locate(*schema.label)));
  if (schema.proxy) claimed.insert(*(proxy_col = locate(*schema.proxy)));
  if (schema.source) claimed.insert(*(source_col = locate(*schema.source)));
  if (schema.latent) claimed.insert(*(latent_col = locate(*schema.latent)));
  std::vector<std::size_t> feature_cols;
  std::vector<std::string> feature_names;
  if (schema.features.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (!claimed.count(i)) {
        feature_cols.push_back(i);
        feature_names.push_back(header[i]);
      }
  } else {
    for (const auto& f : schema.features) {
      feature_cols.push_back(locate(f));
      feature_names.push_back(f);
    }
  }
  if (feature_cols.empty()) throw ParseError("no feature columns", 1);

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_label, raw_proxy, raw_source, raw_latent;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(cells.size()),
                       line_no);
    }
    std::vector<double> r;
    r.reserve(feature_cols.size());
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      const auto v = detail::parse_double(cells[feature_cols[k]]);
      if (!v) {
        throw ParseError("non-numeric value \"" + cells[feature_cols[k]] + "\" in feature \"" + feature_names[k] + "\"",
                         line_no);
      }
      r.push_back(*v);
    }
    rows.push_back(std::move(r));
    if (label_col) raw_label.push_back(cells[*label_col]);
    if (proxy_col) raw_proxy.push_back(cells[*proxy_col]);
    if (source_col) raw_source.push_back(cells[*source_col]);
    if (latent_col) raw_latent.push_back(cells[*latent_col]);
  }

  TabularDataset data;
  auto& obs = data.observed;
  obs.feature_names = feature_names;
  obs.features.resize(static_cast<Index>(rows.size()), static_cast<Index>(feature_cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < feature_cols.size(); ++j) obs.features(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  if (label_col) obs.labels = detail::encode_categorical(raw_label, true, *schema.label, 2);
  if (proxy_col) obs.proxy = detail::encode_categorical(raw_proxy, false, *schema.proxy, 2);
  if (source_col) obs.source_id = detail::encode_categorical(raw_source, false, *schema.source, 2);
  if (latent_col) {
    auto z = detail::encode_categorical(raw_latent, false, *schema.latent, 2);
    data.latent_cardinality = z.cardinality;
    data.latent_truth = std::move(z.ids);
  }
  data.validate();
  return data;
}

/// Writes features as x-named columns (or the table's feature names), then
/// y, s, u, z for whichever columns are present. Missing labels are empty.
inline void write_csv(const std::string& path, const TabularDataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const auto& obs = data.observed;
  std::vector<std::string> header;
  for (Index j = 0; j < obs.dim(); ++j)
    header.push_back(obs.feature_names.empty() ? "x" + std::to_string(j) : obs.feature_names[static_cast<std::size_t>(j)]);
  if (obs.labels) header.emplace_back("y");
  if (obs.proxy) header.emplace_back("s");
  if (obs.source_id) header.emplace_back("u");
  if (data.latent_truth) header.emplace_back("z");
  for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << header[k];
  out << '\n';
  auto level = [](const CategoricalColumn& c, int id) -> std::string {
    if (id == kMissing) return "";
    if (!c.levels.empty()) return c.levels[static_cast<std::size_t>(id)];
    return std::to_string(id);
  };
  for (Index i = 0; i < obs.rows(); ++i) {
    const auto r = static_cast<std::size_t>(i);
    for (Index j = 0; j < obs.dim(); ++j) out << (j ? "," : "") << detail::format_double(obs.features(i, j));
    if (obs.labels) out << ',' << level(*obs.labels, obs.labels->ids[r]);
    if (obs.proxy) out << ',' << level(*obs.proxy, obs.proxy->ids[r]);
    if (obs.source_id) out << ',' << level(*obs.source_id, obs.source_id->ids[r]);
    if (data.latent_truth) out << ',' << (*data.latent_truth)[r];
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

/// Empirical distribution of the non-missing ids of a column.
inline std::vector<double> empirical_marginal(std::span<const int> ids, int cardinality) {
  std::vector<double> p(static_cast<std::size_t>(cardinality), 0.0);
  double n = 0.0;
  for (int id : ids) {
    if (id == kMissing) continue;
    p[static_cast<std::size_t>(id)] += 1.0;
    n += 1.0;
  }
  if (n > 0.0)
    for (auto& v : p) v /= n;
  return p;
}

}  // namespace latent_shift
