#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <tuple>

#include "latent_shift/oracles.hpp"

using namespace latent_shift;

namespace {

Matrix mat(Index r, Index c, std::initializer_list<double> v) {
  Matrix m(r, c);
  auto it = v.begin();
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

using Key = std::vector<long>;

Key key_of(const Matrix& q, const Matrix& m) {
  Key k;
  for (Index i = 0; i < q.size(); ++i) k.push_back(std::lround(q.data()[i] * 20));
  for (Index i = 0; i < m.size(); ++i) k.push_back(std::lround(m.data()[i] * 20));
  return k;
}

/// Independent recount for two latent classes and two proxy levels: every
/// grid decoder against every grid posterior table, no linear algebra.
std::set<Key> naive_two_by_two(const DiscreteJoint& j, double slack) {
  const Matrix target = j.p_s_given_x();
  std::set<Key> out;
  for (int a = 0; a <= 20; ++a)
    for (int b = 0; b <= 20; ++b) {
      const Matrix m = mat(2, 2, {a / 20.0, 1 - a / 20.0, b / 20.0, 1 - b / 20.0});
      for (int q0 = 0; q0 <= 20; ++q0)
        for (int q1 = 0; q1 <= 20; ++q1) {
          const Matrix q = mat(2, 2, {q0 / 20.0, 1 - q0 / 20.0, q1 / 20.0, 1 - q1 / 20.0});
          if (((q * m) - target).cwiseAbs().maxCoeff() <= slack) out.insert(key_of(q, m));
        }
    }
  return out;
}

bool contains_truth(const DiscreteJoint& j, const std::vector<FactorizationCandidate>& cands) {
  return std::any_of(cands.begin(), cands.end(), [&](const FactorizationCandidate& c) {
    return (c.q_s_given_z - j.p_s_given_z).cwiseAbs().maxCoeff() < 1e-12 &&
           (c.q_z_given_x - j.p_z_given_x).cwiseAbs().maxCoeff() < 1e-12;
  });
}

}  // namespace

TEST(SimplexGrid, CountsAndRows) {
  EXPECT_EQ(simplex_grid(2, 20).rows(), 21);
  EXPECT_EQ(simplex_grid(3, 20).rows(), 231);
  const Matrix g = simplex_grid(3, 4);
  for (Index r = 0; r < g.rows(); ++r) EXPECT_NEAR(g.row(r).sum(), 1.0, 1e-15);
}

TEST(Enumerate, SingleLatentClassHasOneDecoder) {
  const auto j = make_joint("one", mat(3, 1, {1, 1, 1}), mat(1, 3, {0.3, 0.25, 0.45}));
  const auto c = enumerate_factorizations(j, 0.05);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_TRUE(c[0].q_s_given_z.isApprox(j.p_s_given_z, 1e-12));
  EXPECT_TRUE(c[0].q_z_given_x.isApprox(Matrix::Ones(3, 1)));
}

TEST(Enumerate, TruthIsAmongCandidatesUnderFullOverlap) {
  for (const auto& j : variance_suite()) {
    const auto c = enumerate_factorizations(j, 0.05);
    EXPECT_TRUE(contains_truth(j, c)) << j.name;
  }
}

TEST(Enumerate, MatchesIndependentRecount) {
  const std::vector<DiscreteJoint> cases{
      make_joint("soft", mat(2, 2, {0.8, 0.2, 0.3, 0.7}), mat(2, 2, {0.9, 0.1, 0.2, 0.8})),
      make_joint("hard", mat(2, 2, {1, 0, 0, 1}), mat(2, 2, {0.7, 0.3, 0.4, 0.6})),
      make_joint("flat", mat(2, 2, {0.5, 0.5, 0.5, 0.5}), mat(2, 2, {0.5, 0.5, 0.5, 0.5})),
  };
  for (const auto& j : cases) {
    const auto fast = enumerate_factorizations(j, 0.05);
    const auto naive = naive_two_by_two(j, 1e-9);
    std::set<Key> got;
    for (const auto& c : fast) got.insert(key_of(c.q_z_given_x, c.q_s_given_z));
    EXPECT_EQ(got.size(), fast.size()) << j.name << ": duplicate candidates";
    EXPECT_EQ(got, naive) << j.name;
    EXPECT_FALSE(naive.empty()) << j.name;
  }
}

TEST(Enumerate, EveryCandidateReproducesTheJoint) {
  const auto j = variance_suite()[3];
  for (const auto& c : enumerate_factorizations(j, 0.05))
    EXPECT_LE((c.q_z_given_x * c.q_s_given_z - j.p_s_given_x()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Enumerate, SizeGuards) {
  const auto big = make_joint("big", Matrix::Constant(7, 2, 0.5), mat(2, 2, {0.5, 0.5, 0.5, 0.5}));
  EXPECT_THROW(enumerate_factorizations(big, 0.05), SizeGuardError);
  const auto j = variance_suite()[0];
  EXPECT_THROW(enumerate_factorizations(j, 0.01), SizeGuardError);
  EXPECT_THROW(enumerate_factorizations(j, 0.03), ValidationError);
  EnumerationLimits tight;
  tight.max_candidates = 1;
  EXPECT_THROW(enumerate_factorizations(make_joint("flat", Matrix::Constant(2, 2, 0.5), Matrix::Constant(2, 2, 0.5)),
                                        0.05, 1e-9, tight),
               SizeGuardError);
}

TEST(VarianceMinimality, SingletonTruthPassesWithZeroMargin) {
  const auto j = variance_suite()[0];
  const std::vector<FactorizationCandidate> only{{j.p_z_given_x, j.p_s_given_z}};
  const auto r = check_variance_minimality(j, only);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.min_margin, 0.0);
  EXPECT_EQ(r.candidates, 1u);
}

TEST(VarianceMinimality, SymmetricBinaryChannel) {
  const auto j = make_joint("sym", mat(2, 2, {1, 0, 0, 1}), mat(2, 2, {0.9, 0.1, 0.1, 0.9}));
  const auto cands = enumerate_factorizations(j, 0.05);
  const auto r = check_variance_minimality(j, cands);
  EXPECT_NEAR(r.truth_value, 0.16, 1e-12);
  EXPECT_TRUE(r.passed);
  for (const auto& c : cands) EXPECT_GE(variance_regularizer(c.q_s_given_z), 0.16 - 1e-12);
}

TEST(VarianceMinimality, WholeSuitePasses) {
  const auto suite = variance_suite();
  EXPECT_GE(suite.size(), 5u);
  for (const auto& j : suite) {
    EXPECT_DOUBLE_EQ(j.overlap(), 1.0) << j.name;
    const auto r = check_variance_minimality(j, enumerate_factorizations(j, 0.05));
    EXPECT_TRUE(r.passed) << j.name << " min margin " << r.min_margin;
    EXPECT_GT(r.candidates, 0u);
  }
}

TEST(VarianceMinimality, PartialOverlapIsAPreconditionError) {
  const auto j = overlap_instance(0.9);
  EXPECT_THROW(check_variance_minimality(j, {}), PreconditionError);
}

TEST(VarianceMinimality, TruncatedRowLoopIsCaught) {
  bool caught = false;
  for (const auto& j : variance_suite()) {
    const auto r = check_variance_minimality(j, enumerate_factorizations(j, 0.05), truncated_variance_regularizer);
    caught = caught || !r.passed;
  }
  EXPECT_TRUE(caught);
}

TEST(PermutationRecovery, SwappedColumnsAreExact) {
  const Matrix truth = mat(3, 2, {0.9, 0.1, 0.2, 0.8, 0.5, 0.5});
  const Matrix swapped = truth.rowwise().reverse();
  const auto r = check_permutation_recovery(truth, swapped);
  EXPECT_EQ(r.max_abs_error, 0.0);
  EXPECT_EQ(r.permutation, (std::vector<Index>{1, 0}));
}

TEST(PermutationRecovery, SmallPerturbation) {
  const Matrix truth = mat(3, 3, {0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4});
  Matrix learned = truth.array() + 0.01;
  learned = learned.array().colwise() / learned.rowwise().sum().array();
  const double direct = (learned - truth).cwiseAbs().maxCoeff();
  const auto r = check_permutation_recovery(truth, learned);
  EXPECT_LE(r.max_abs_error, 0.02);
  EXPECT_DOUBLE_EQ(r.max_abs_error, direct);
}

TEST(PermutationRecovery, SingleClassAndShapes) {
  const auto r = check_permutation_recovery(mat(2, 1, {1, 1}), mat(2, 1, {0.9, 1}));
  EXPECT_NEAR(r.max_abs_error, 0.1, 1e-15);
  EXPECT_EQ(r.permutation, (std::vector<Index>{0}));
  EXPECT_THROW(check_permutation_recovery(Matrix::Ones(2, 2), Matrix::Ones(3, 2)), ShapeError);
}

TEST(OverlapTrend, ShrinksToZeroAtFullOverlap) {
  const std::vector<double> etas{0.7, 0.8, 0.9, 1.0};
  const auto t = overlap_trend(etas);
  ASSERT_EQ(t.size(), 4u);
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_LE(t[i].worst_error, t[i - 1].worst_error);
  EXPECT_EQ(t.back().worst_error, 0.0);
  for (const auto& p : t) EXPECT_GT(p.admissible, 0u);
  EXPECT_GT(t.front().worst_error, 0.0);
}

TEST(VerificationSuite, CleanPassesAndCorruptedFails) {
  const auto clean = run_verification_suite();
  EXPECT_TRUE(clean.all_passed());
  const auto bad = run_verification_suite(truncated_variance_regularizer);
  EXPECT_FALSE(bad.all_passed());
}
