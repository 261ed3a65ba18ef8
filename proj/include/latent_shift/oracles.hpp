#pragma once

// Brute-force checks on tiny discrete models. A DiscreteJoint fixes P(Z|X)
// on a finite support and P(S|Z); enumerate_factorizations lists every
// grid-aligned pair (Q(Z|X), Q(S|Z)) that reproduces P(S|X), and the checks
// below inspect that list.

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/LU>

#include "latent_shift/dataset.hpp"
#include "latent_shift/errors.hpp"
#include "latent_shift/latent.hpp"
#include "latent_shift/nn.hpp"

namespace latent_shift {

struct DiscreteJoint {
  std::string name;
  std::vector<int> support_x;
  Vector p_x;
  Matrix p_z_given_x;  // |X| x n_z
  Matrix p_s_given_z;  // n_z x n_s

  Index x_count() const { return p_z_given_x.rows(); }
  Index n_z() const { return p_z_given_x.cols(); }
  Index n_s() const { return p_s_given_z.cols(); }

  Matrix p_s_given_x() const { return p_z_given_x * p_s_given_z; }

  void validate() const {
    if (p_s_given_z.rows() != n_z()) throw ShapeError("P(S|Z) needs one row per latent class");
    if (p_x.size() != x_count() || static_cast<Index>(support_x.size()) != x_count()) {
      throw ShapeError("support, P(X) and P(Z|X) disagree on |X|");
    }
    std::vector<double> px(p_x.data(), p_x.data() + p_x.size());
    require_simplex(px, "P(X)", 1e-9);
    require_row_stochastic(p_z_given_x, "P(Z|X)", 1e-9);
    require_row_stochastic(p_s_given_z, "P(S|Z)", 1e-9);
  }

  /// Smallest over z of max over x of P(Z=z|X=x).
  double overlap() const {
    return p_z_given_x.colwise().maxCoeff().minCoeff();
  }
};

/// Builds a joint with uniform P(X) over ids 0..rows-1.
inline DiscreteJoint make_joint(std::string name, Matrix p_z_given_x, Matrix p_s_given_z) {
  DiscreteJoint j;
  j.name = std::move(name);
  const Index n = p_z_given_x.rows();
  j.support_x.resize(static_cast<std::size_t>(n));
  std::iota(j.support_x.begin(), j.support_x.end(), 0);
  j.p_x = Vector::Constant(n, 1.0 / static_cast<double>(n));
  j.p_z_given_x = std::move(p_z_given_x);
  j.p_s_given_z = std::move(p_s_given_z);
  j.validate();
  return j;
}

struct FactorizationCandidate {
  Matrix q_z_given_x;
  Matrix q_s_given_z;
};

struct EnumerationLimits {
  Index max_x = 6;
  Index max_nz = 3;
  Index max_ns = 3;
  std::size_t max_candidates = 1'000'000;
};

/// All points of the simplex over `parts` classes whose coordinates are
/// multiples of 1/steps, as rows of a matrix.
inline Matrix simplex_grid(Index parts, int steps) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(parts), 0);
  std::function<void(Index, int)> rec = [&](Index pos, int left) {
    if (pos == parts - 1) {
      cur[static_cast<std::size_t>(pos)] = left;
      out.push_back(cur);
      return;
    }
    for (int v = left; v >= 0; --v) {
      cur[static_cast<std::size_t>(pos)] = v;
      rec(pos + 1, left - v);
    }
  };
  rec(0, steps);
  Matrix g(static_cast<Index>(out.size()), parts);
  for (std::size_t r = 0; r < out.size(); ++r)
    for (Index c = 0; c < parts; ++c) g(static_cast<Index>(r), c) = out[r][static_cast<std::size_t>(c)] / static_cast<double>(steps);
  return g;
}

namespace detail {

inline int grid_steps(double grid_step) {
  if (!(grid_step > 0.0)) throw ValidationError("grid_step must be positive");
  const double inv = 1.0 / grid_step;
  const long steps = std::lround(inv);
  if (std::abs(inv - static_cast<double>(steps)) > 1e-9) throw ValidationError("1/grid_step must be an integer");
  if (steps > 20) throw SizeGuardError("grid finer than 0.05 is not supported");
  return static_cast<int>(steps);
}

/// Solves the n x n system in place by Gaussian elimination with partial
/// pivoting. Returns false when a pivot falls below `tiny`.
inline bool small_solve(double a[3][3], double b[3], int n, double tiny = 1e-10) {
  for (int c = 0; c < n; ++c) {
    int p = c;
    for (int r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    if (std::abs(a[p][c]) < tiny) return false;
    if (p != c) {
      for (int k = 0; k < n; ++k) std::swap(a[p][k], a[c][k]);
      std::swap(b[p], b[c]);
    }
    for (int r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (int k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  for (int c = n - 1; c >= 0; --c) {
    double v = b[c];
    for (int k = c + 1; k < n; ++k) v -= a[c][k] * b[k];
    b[c] = v / a[c][c];
  }
  return true;
}

inline bool reproduces(const double* q, const Matrix& m, const Matrix& target, Index x, double slack) {
  for (Index s = 0; s < m.cols(); ++s) {
    double v = 0.0;
    for (Index z = 0; z < m.rows(); ++z) v += q[z] * m(z, s);
    if (std::abs(v - target(x, s)) > slack) return false;
  }
  return true;
}

}  // namespace detail

/// Every grid-aligned (Q(Z|X), Q(S|Z)) with max-abs |Q(S|X) - P(S|X)| <=
/// loss_slack. Rows of Q(S|Z) are drawn from the grid; for each x the
/// matching Q(Z|X=x) is found by a linear solve when Q(S|Z) has full row
/// rank and by a grid scan otherwise.
inline std::vector<FactorizationCandidate> enumerate_factorizations(const DiscreteJoint& joint, double grid_step,
                                                                    double loss_slack = 1e-9,
                                                                    const EnumerationLimits& limits = {}) {
  joint.validate();
  const Index nx = joint.x_count(), nz = joint.n_z(), ns = joint.n_s();
  if (nx > limits.max_x || nz > std::min<Index>(limits.max_nz, 3) || ns > limits.max_ns) {
    throw SizeGuardError("instance too large for enumeration (|X| = " + std::to_string(nx) + ", n_z = " +
                         std::to_string(nz) + ", n_s = " + std::to_string(ns) + ")");
  }
  const int steps = detail::grid_steps(grid_step);
  const Matrix target = joint.p_s_given_x();
  const Matrix s_rows = simplex_grid(ns, steps);
  const Matrix z_rows = simplex_grid(nz, steps);
  const Index n_rows = s_rows.rows();
  const double on_grid_tol = 1e-7;

  std::vector<FactorizationCandidate> out;
  std::vector<Index> pick(static_cast<std::size_t>(nz), 0);
  Matrix m(nz, ns);
  std::vector<std::vector<Vector>> per_x(static_cast<std::size_t>(nx));

  while (true) {
    for (Index z = 0; z < nz; ++z) m.row(z) = s_rows.row(pick[static_cast<std::size_t>(z)]);

    // Gram matrix M M^T decides which path finds Q(Z|X=x).
    double gram[3][3];
    for (Index a = 0; a < nz; ++a)
      for (Index b = 0; b < nz; ++b) gram[a][b] = m.row(a).dot(m.row(b));
    bool feasible = true;
    for (Index x = 0; x < nx && feasible; ++x) {
      auto& found = per_x[static_cast<std::size_t>(x)];
      found.clear();
      double g[3][3], rhs[3];
      for (Index a = 0; a < nz; ++a) {
        for (Index b = 0; b < nz; ++b) g[a][b] = gram[a][b];
        rhs[a] = m.row(a).dot(target.row(x));
      }
      if (detail::small_solve(g, rhs, static_cast<int>(nz))) {
        Vector q(nz);
        bool ok = true;
        for (Index z = 0; z < nz && ok; ++z) {
          const double scaled = rhs[z] * steps;
          const double snapped = std::round(scaled);
          if (std::abs(scaled - snapped) > on_grid_tol * steps || snapped < 0.0) ok = false;
          q(z) = snapped / steps;
        }
        if (ok && std::abs(q.sum() - 1.0) < 1e-9 && detail::reproduces(q.data(), m, target, x, loss_slack)) found.push_back(q);
      } else {
        for (Index r = 0; r < z_rows.rows(); ++r) {
          const Vector q = z_rows.row(r).transpose();
          if (detail::reproduces(q.data(), m, target, x, loss_slack)) found.push_back(q);
        }
      }
      feasible = !found.empty();
    }

    if (feasible) {
      std::size_t count = 1;
      for (const auto& f : per_x) count *= f.size();
      if (out.size() + count > limits.max_candidates) throw SizeGuardError("candidate list exceeds the configured cap");
      std::vector<std::size_t> idx(static_cast<std::size_t>(nx), 0);
      while (true) {
        FactorizationCandidate c{Matrix(nx, nz), m};
        for (Index x = 0; x < nx; ++x) c.q_z_given_x.row(x) = per_x[static_cast<std::size_t>(x)][idx[static_cast<std::size_t>(x)]].transpose();
        out.push_back(std::move(c));
        Index k = 0;
        while (k < nx && ++idx[static_cast<std::size_t>(k)] == per_x[static_cast<std::size_t>(k)].size()) idx[static_cast<std::size_t>(k++)] = 0;
        if (k == nx) break;
      }
    }

    Index k = 0;
    while (k < nz && ++pick[static_cast<std::size_t>(k)] == n_rows) pick[static_cast<std::size_t>(k++)] = 0;
    if (k == nz) break;
  }
  return out;
}

using VarianceFunction = std::function<double(const Matrix&)>;

struct VarianceMinimalityReport {
  bool passed = true;
  double truth_value = 0.0;
  std::size_t candidates = 0;
  double min_margin = 0.0;
  double max_margin = 0.0;
  double median_margin = 0.0;
  /// Index of the candidate with the smallest margin.
  std::size_t worst = 0;
  double tolerance = 0.0;
};

/// Requires every class to reach posterior 1 somewhere.
inline void require_full_overlap(const DiscreteJoint& joint) {
  for (Index z = 0; z < joint.n_z(); ++z) {
    if (joint.p_z_given_x.col(z).maxCoeff() < 1.0 - 1e-12) {
      throw PreconditionError("latent class " + std::to_string(z) + " of '" + joint.name +
                              "' never reaches posterior 1; variance minimality needs full overlap");
    }
  }
}

/// Compares the truth's max-row variance against every candidate decoder.
/// Margins are candidate minus truth; the check fails on any margin below
/// -tolerance.
inline VarianceMinimalityReport check_variance_minimality(const DiscreteJoint& joint,
                                                          const std::vector<FactorizationCandidate>& candidates,
                                                          const VarianceFunction& variance = {},
                                                          double tolerance = 1e-9) {
  require_full_overlap(joint);
  const VarianceFunction f = variance ? variance : VarianceFunction([](const Matrix& m) { return variance_regularizer(m); });
  VarianceMinimalityReport r;
  r.tolerance = tolerance;
  r.truth_value = f(joint.p_s_given_z);
  r.candidates = candidates.size();
  if (candidates.empty()) return r;
  std::vector<double> margins;
  margins.reserve(candidates.size());
  for (const auto& c : candidates) margins.push_back(f(c.q_s_given_z) - r.truth_value);
  const auto lo = std::min_element(margins.begin(), margins.end());
  r.worst = static_cast<std::size_t>(lo - margins.begin());
  r.min_margin = *lo;
  r.max_margin = *std::max_element(margins.begin(), margins.end());
  std::vector<double> sorted = margins;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  r.median_margin = sorted[sorted.size() / 2];
  r.passed = r.min_margin >= -tolerance;
  return r;
}

struct PermutationRecovery {
  /// learned column perm[i] is matched to true class i.
  std::vector<Index> permutation;
  double max_abs_error = 0.0;
};

inline PermutationRecovery check_permutation_recovery(const Matrix& truth, const Matrix& learned) {
  if (truth.rows() != learned.rows() || truth.cols() != learned.cols()) {
    throw ShapeError("learned posterior table has a different shape than the truth");
  }
  const Index n = truth.cols();
  if (n > 6) throw SizeGuardError("permutation search is limited to 6 classes");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  PermutationRecovery best{perm, std::numeric_limits<double>::infinity()};
  do {
    double err = 0.0;
    for (Index i = 0; i < n; ++i)
      err = std::max(err, (truth.col(i) - learned.col(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff());
    if (err < best.max_abs_error) best = {perm, err};
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline PermutationRecovery check_permutation_recovery(const DiscreteJoint& joint, const Matrix& learned_q_z_given_x) {
  return check_permutation_recovery(joint.p_z_given_x, learned_q_z_given_x);
}

// ---------------------------------------------------------------------------
// Fixed instances

/// Full-overlap instances used by `verify`. Every entry lies on the 0.05 grid.
inline std::vector<DiscreteJoint> variance_suite() {
  std::vector<DiscreteJoint> suite;
  {
    Matrix pzx(3, 2), m(2, 2);
    pzx << 1, 0, 0, 1, 0.5, 0.5;
    m << 0.9, 0.1, 0.1, 0.9;
    suite.push_back(make_joint("binary-symmetric", pzx, m));
  }
  {
    Matrix pzx(3, 2), m(2, 2);
    pzx << 1, 0, 0, 1, 0.3, 0.7;
    m << 0.8, 0.2, 0.3, 0.7;
    suite.push_back(make_joint("binary-asymmetric", pzx, m));
  }
  {
    Matrix pzx(4, 2), m(2, 3);
    pzx << 1, 0, 0, 1, 0.5, 0.5, 0.25, 0.75;
    m << 0.7, 0.3, 0.0, 0.1, 0.2, 0.7;
    suite.push_back(make_joint("two-latent-three-proxy", pzx, m));
  }
  {
    Matrix pzx(4, 3), m(3, 3);
    pzx << 1, 0, 0, 0, 1, 0, 0, 0, 1, 0.5, 0.25, 0.25;
    m << 0.7, 0.3, 0.0, 0.8, 0.1, 0.1, 0.1, 0.0, 0.9;
    suite.push_back(make_joint("three-class-synthetic-channel", pzx, m));
  }
  {
    Matrix pzx(4, 3), m(3, 3);
    pzx << 1, 0, 0, 0, 1, 0, 0, 0, 1, 0.2, 0.4, 0.4;
    m << 0.6, 0.2, 0.2, 0.1, 0.8, 0.1, 0.2, 0.2, 0.6;
    suite.push_back(make_joint("three-class-diagonal", pzx, m));
  }
  return suite;
}

/// Two-class instance whose posteriors peak at eta: rows (eta, 1-eta),
/// (1-eta, eta) and (0.5, 0.5), decoder rows (0.9, 0.1) and (0.1, 0.9).
inline DiscreteJoint overlap_instance(double eta) {
  if (!(eta > 0.5 && eta <= 1.0)) throw ValidationError("eta must lie in (0.5, 1]");
  Matrix pzx(3, 2), m(2, 2);
  pzx << eta, 1.0 - eta, 1.0 - eta, eta, 0.5, 0.5;
  m << 0.9, 0.1, 0.1, 0.9;
  return make_joint("overlap-" + std::to_string(eta), pzx, m);
}

struct OverlapTrendPoint {
  double eta = 0.0;
  std::size_t admissible = 0;
  /// Largest permutation-recovery error over admissible candidates.
  double worst_error = 0.0;
};

/// For each eta, the worst recovery error over candidates that reproduce
/// P(S|X), keep every latent class at posterior >= eta somewhere, and have a
/// full-rank decoder.
inline std::vector<OverlapTrendPoint> overlap_trend(std::span<const double> etas, double grid_step = 0.05) {
  std::vector<OverlapTrendPoint> out;
  for (double eta : etas) {
    const DiscreteJoint joint = overlap_instance(eta);
    OverlapTrendPoint p{eta, 0, 0.0};
    for (const auto& c : enumerate_factorizations(joint, grid_step)) {
      if (c.q_z_given_x.colwise().maxCoeff().minCoeff() < eta - 1e-9) continue;
      Eigen::FullPivLU<Matrix> lu(c.q_s_given_z);
      if (lu.rank() < c.q_s_given_z.rows()) continue;
      ++p.admissible;
      p.worst_error = std::max(p.worst_error, check_permutation_recovery(joint, c.q_z_given_x).max_abs_error);
    }
    out.push_back(p);
  }
  return out;
}

/// Variance regularizer with the row loop stopping one short, for mutation
/// checks: the last row never counts.
inline double truncated_variance_regularizer(const Matrix& m) {
  if (m.rows() < 2) return 0.0;
  return variance_regularizer(Matrix(m.topRows(m.rows() - 1)));
}

struct VerificationRow {
  std::string check;
  std::string instance;
  bool passed = false;
  std::string detail;
};

struct VerificationSummary {
  std::vector<VerificationRow> rows;

  bool all_passed() const {
    return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const VerificationRow& r) { return r.passed; });
  }
};

/// Variance minimality on every suite instance, permutation recovery of the
/// truth against itself and against a column swap, and the overlap trend.
inline VerificationSummary run_verification_suite(const VarianceFunction& variance = {}, double grid_step = 0.05) {
  VerificationSummary out;
  char buf[256];
  for (const auto& joint : variance_suite()) {
    const auto candidates = enumerate_factorizations(joint, grid_step);
    const auto r = check_variance_minimality(joint, candidates, variance);
    std::snprintf(buf, sizeof buf, "%zu candidates, truth %.6f, min margin %+.6f, median %+.6f", r.candidates,
                  r.truth_value, r.min_margin, r.median_margin);
    out.rows.push_back({"variance minimality", joint.name, r.passed && r.candidates > 0, buf});

    const auto self = check_permutation_recovery(joint, joint.p_z_given_x);
    Matrix swapped = joint.p_z_given_x.rowwise().reverse();
    const auto rev = check_permutation_recovery(joint, swapped);
    std::snprintf(buf, sizeof buf, "self %.3g, reversed columns %.3g", self.max_abs_error, rev.max_abs_error);
    out.rows.push_back({"permutation recovery", joint.name, self.max_abs_error == 0.0 && rev.max_abs_error == 0.0, buf});
  }
  const std::vector<double> etas{0.7, 0.8, 0.9, 1.0};
  const auto trend = overlap_trend(etas, grid_step);
  bool monotone = true;
  std::string detail;
  for (std::size_t i = 0; i < trend.size(); ++i) {
    if (i > 0 && trend[i].worst_error > trend[i - 1].worst_error + 1e-12) monotone = false;
    std::snprintf(buf, sizeof buf, "%seta %.1f: %.3f", i ? ", " : "", trend[i].eta, trend[i].worst_error);
    detail += buf;
  }
  const bool exact_at_one = !trend.empty() && trend.back().admissible > 0 && trend.back().worst_error <= 1e-12;
  out.rows.push_back({"overlap trend", "two-class, eta in {0.7, 0.8, 0.9, 1.0}", monotone && exact_at_one, detail});
  return out;
}

}  // namespace latent_shift
