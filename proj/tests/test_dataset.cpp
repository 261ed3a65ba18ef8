#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "latent_shift/dataset.hpp"

using namespace latent_shift;
namespace fs = std::filesystem;

namespace {

std::vector<double> empirical(const std::vector<int>& ids, int k, const std::vector<std::size_t>* rows = nullptr) {
  std::vector<double> out(static_cast<std::size_t>(k), 0.0);
  double n = 0.0;
  auto add = [&](std::size_t i) {
    out[static_cast<std::size_t>(ids[i])] += 1.0;
    n += 1.0;
  };
  if (rows) {
    for (auto i : *rows) add(i);
  } else {
    for (std::size_t i = 0; i < ids.size(); ++i) add(i);
  }
  for (auto& v : out) v /= n;
  return out;
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("latent_shift_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  void write(const std::string& name, const std::string& text) const { std::ofstream(file(name)) << text; }

 private:
  fs::path path_;
};

}  // namespace

TEST(ProxyTask, TrainMarginalMatchesSpecification) {
  ProxyTaskSpec spec;
  spec.seed = 3;
  const auto d = generate_proxy_task(spec, Split::train);
  ASSERT_EQ(d.rows(), 10000);
  const auto p = empirical(*d.latent_truth, 3);
  EXPECT_NEAR(p[0], 0.15, 0.02);
  EXPECT_NEAR(p[1], 0.35, 0.02);
  EXPECT_NEAR(p[2], 0.5, 0.02);
  EXPECT_TRUE(d.observed.proxy.has_value());
  EXPECT_EQ(d.observed.labeled_count(), 10000u);
}

TEST(ProxyTask, TestSplitHidesProxyAndShiftsMarginal) {
  ProxyTaskSpec spec;
  spec.seed = 3;
  const auto d = generate_proxy_task(spec, Split::test);
  EXPECT_FALSE(d.observed.proxy.has_value());
  const auto p = empirical(*d.latent_truth, 3);
  EXPECT_NEAR(p[0], 0.7, 0.02);
  EXPECT_NEAR(p[1], 0.2, 0.02);
  EXPECT_NEAR(p[2], 0.1, 0.02);
}

TEST(ProxyTask, Deterministic) {
  ProxyTaskSpec spec;
  spec.seed = 9;
  spec.n_samples = 500;
  const auto a = generate_proxy_task(spec, Split::train);
  const auto b = generate_proxy_task(spec, Split::train);
  EXPECT_EQ(a.observed.features, b.observed.features);
  EXPECT_EQ(a.observed.proxy->ids, b.observed.proxy->ids);
  EXPECT_EQ(a.observed.labels->ids, b.observed.labels->ids);
  spec.seed = 10;
  EXPECT_NE(generate_proxy_task(spec, Split::train).observed.features, a.observed.features);
}

TEST(ProxyTask, ChannelAndCovariateMoments) {
  ProxyTaskSpec spec;
  spec.seed = 1;
  spec.n_samples = 100000;
  const auto d = generate_proxy_task(spec, Split::train);
  const auto& z = *d.latent_truth;
  const Matrix channel = default_proxy_channel();
  for (int k = 0; k < 3; ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < z.size(); ++i)
      if (z[i] == k) rows.push_back(i);
    const auto ps = empirical(d.observed.proxy->ids, 3, &rows);
    for (int s = 0; s < 3; ++s) EXPECT_NEAR(ps[static_cast<std::size_t>(s)], channel(k, s), 0.01) << "z=" << k << " s=" << s;
    double m1 = 0.0, m2 = 0.0;
    for (auto i : rows) {
      m1 += d.observed.features(static_cast<Index>(i), 0);
      m2 += d.observed.features(static_cast<Index>(i), 1);
    }
    const double n = static_cast<double>(rows.size());
    m1 /= n;
    m2 /= n;
    // sd(X1 | Z) is about 1, sd(X2 | Z) about sqrt(5).
    EXPECT_NEAR(m1, k, 3.0 * 1.02 / std::sqrt(n));
    EXPECT_NEAR(m2, 0.0, 3.0 * std::sqrt(5.0) / std::sqrt(n));
  }
}

TEST(ProxyTask, InvalidMarginalRejected) {
  ProxyTaskSpec spec;
  spec.pz = std::vector<double>{0.5, 0.6, -0.1};
  EXPECT_THROW(generate_proxy_task(spec, Split::train), ValidationError);
  spec.pz = std::vector<double>{0.5, 0.6, 0.1};
  EXPECT_THROW(generate_proxy_task(spec, Split::train), ValidationError);
  ProxyTaskSpec zero;
  zero.n_samples = 0;
  EXPECT_THROW(generate_proxy_task(zero, Split::train), ValidationError);
}

TEST(MultiSourceTask, SourceMarginalsAndLabelRule) {
  MultiSourceTaskSpec spec;
  spec.seed = 4;
  spec.labeled_source = 1;
  const auto d = generate_multisource_task(spec, Split::train);
  ASSERT_EQ(d.rows(), 30000);
  const auto& src = d.observed.source_id->ids;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < src.size(); ++i)
      if (src[i] == static_cast<int>(k)) rows.push_back(i);
    ASSERT_EQ(rows.size(), 10000u);
    const auto p = empirical(*d.latent_truth, 3, &rows);
    for (std::size_t z = 0; z < 3; ++z) EXPECT_NEAR(p[z], spec.pz_per_source[k][z], 0.02);
  }
  for (std::size_t i = 0; i < src.size(); ++i) EXPECT_EQ(d.observed.labels->ids[i] != kMissing, src[i] == 1);
}

TEST(MultiSourceTask, TestSplitUsesTestMarginal) {
  MultiSourceTaskSpec spec;
  spec.seed = 4;
  const auto d = generate_multisource_task(spec, Split::test);
  EXPECT_EQ(d.rows(), 10000);
  EXPECT_FALSE(d.observed.source_id.has_value());
  EXPECT_EQ(d.observed.labeled_count(), 10000u);
  const auto p = empirical(*d.latent_truth, 3);
  EXPECT_NEAR(p[0], 0.7, 0.02);
  EXPECT_NEAR(p[1], 0.2, 0.02);
  EXPECT_NEAR(p[2], 0.1, 0.02);
}

TEST(MultiSourceTask, Guards) {
  MultiSourceTaskSpec spec;
  spec.pz_per_source.clear();
  EXPECT_THROW(generate_multisource_task(spec, Split::train), ValidationError);
  MultiSourceTaskSpec bad;
  bad.labeled_source = 3;
  EXPECT_THROW(generate_multisource_task(bad, Split::train), ValidationError);
}

TEST(Split, SizesDeterminismAndPartition) {
  ProxyTaskSpec spec;
  spec.n_samples = 10;
  const auto d = generate_proxy_task(spec, Split::train);
  const auto [a, b] = split_train_val(d, 0.2, 5);
  EXPECT_EQ(a.rows(), 8);
  EXPECT_EQ(b.rows(), 2);
  const auto [a2, b2] = split_train_val(d, 0.2, 5);
  EXPECT_EQ(a.observed.features, a2.observed.features);
  EXPECT_EQ(b.observed.features, b2.observed.features);

  std::multiset<double> all, parts;
  for (Index i = 0; i < d.rows(); ++i) all.insert(d.observed.features(i, 0));
  for (Index i = 0; i < a.rows(); ++i) parts.insert(a.observed.features(i, 0));
  for (Index i = 0; i < b.rows(); ++i) parts.insert(b.observed.features(i, 0));
  EXPECT_EQ(all, parts);
  EXPECT_THROW(split_train_val(d, 0.01, 5), ValidationError);
  EXPECT_THROW(split_train_val(d, 1.0, 5), ValidationError);
}

TEST(Standardizer, ZeroMeanUnitScale) {
  Matrix x(4, 2);
  x << 1, 5, 2, 5, 3, 5, 4, 5;
  const auto s = Standardizer::fit(x);
  const Matrix z = s.apply(x);
  EXPECT_NEAR(z.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR((z.col(0).array().square().sum()) / 3.0, 1.0, 1e-12);
  EXPECT_TRUE(z.col(1).isZero());
  EXPECT_EQ(Standardizer{}.apply(x), x);
}

TEST(Csv, ThreeRowsWithLabel) {
  TempDir dir;
  dir.write("a.csv", "x0,x1,x2,y\n1,2,3,0\n4,5,6,1\n7,8,9,1\n");
  CsvSchema schema;
  schema.label = "y";
  const auto d = load_csv(dir.file("a.csv"), schema);
  EXPECT_EQ(d.rows(), 3);
  EXPECT_EQ(d.observed.dim(), 3);
  EXPECT_EQ(d.observed.labels->ids, (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(d.observed.features(2, 1), 8.0);
}

TEST(Csv, CategoricalLevelsAreEncoded) {
  TempDir dir;
  dir.write("a.csv", "x0,s\n1,b\n2,a\n3,c\n4,a\n");
  CsvSchema schema;
  schema.proxy = "s";
  const auto d = load_csv(dir.file("a.csv"), schema);
  const auto& s = *d.observed.proxy;
  EXPECT_EQ(s.cardinality, 3);
  std::set<int> ids(s.ids.begin(), s.ids.end());
  EXPECT_EQ(ids, (std::set<int>{0, 1, 2}));
  const std::vector<std::string> raw{"b", "a", "c", "a"};
  for (std::size_t i = 0; i < s.ids.size(); ++i) EXPECT_EQ(s.levels[static_cast<std::size_t>(s.ids[i])], raw[i]);
  EXPECT_EQ(s.ids[1], s.ids[3]);
}

TEST(Csv, MissingColumnNamed) {
  TempDir dir;
  dir.write("a.csv", "x0,x1\n1,2\n");
  CsvSchema schema;
  schema.proxy = "s";
  try {
    load_csv(dir.file("a.csv"), schema);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("\"s\""), std::string::npos) << e.what();
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST(Csv, RaggedAndNonNumericRowsCarryLineNumbers) {
  TempDir dir;
  dir.write("ragged.csv", "x0,x1\n1,2\n3\n");
  dir.write("text.csv", "x0,x1\n1,2\n3,4\nfive,6\n");
  try {
    load_csv(dir.file("ragged.csv"), {});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    load_csv(dir.file("text.csv"), {});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
}

TEST(Csv, EmptyLabelIsMissing) {
  TempDir dir;
  dir.write("a.csv", "x0,y\n1,1\n2,\n3,0\n");
  CsvSchema schema;
  schema.label = "y";
  const auto d = load_csv(dir.file("a.csv"), schema);
  EXPECT_EQ(d.observed.labels->ids, (std::vector<int>{1, kMissing, 0}));
  EXPECT_EQ(d.observed.labeled_count(), 2u);
}

TEST(Csv, RoundTripIsExact) {
  TempDir dir;
  MultiSourceTaskSpec spec;
  spec.n_samples_per_source = 50;
  spec.labeled_source = 1;
  const auto d = generate_multisource_task(spec, Split::train);
  write_csv(dir.file("d.csv"), d);
  CsvSchema schema;
  schema.label = "y";
  schema.source = "u";
  schema.latent = "z";
  const auto back = load_csv(dir.file("d.csv"), schema);
  EXPECT_EQ(back.observed.features, d.observed.features);
  EXPECT_EQ(back.observed.feature_names, d.observed.feature_names);
  EXPECT_EQ(back.observed.labels->ids, d.observed.labels->ids);
  EXPECT_EQ(back.observed.source_id->ids, d.observed.source_id->ids);
  EXPECT_EQ(*back.latent_truth, *d.latent_truth);
}

TEST(Csv, ShortestRoundTripFormatting) {
  EXPECT_EQ(detail::format_double(0.1), "0.1");
  for (double v : {1.0 / 3.0, -2.5e-300, 123456789.123456789}) EXPECT_EQ(std::stod(detail::format_double(v)), v);
}
