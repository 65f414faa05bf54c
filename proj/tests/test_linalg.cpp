#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "support.hpp"

using namespace adaptimpute;
using namespace testing_support;

namespace {

std::vector<Cell> cells_of(const Eigen::MatrixXd& mask) {
  std::vector<Cell> out;
  for (Index j = 0; j < mask.cols(); ++j)
    for (Index i = 0; i < mask.rows(); ++i)
      if (mask(i, j) != 0.0) out.push_back({i, j});
  return out;
}

/// M~ built entry by entry: observed value on Ω, clipped Z elsewhere.
Eigen::MatrixXd filled_reference(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask,
                                 const Eigen::MatrixXd& z, const ClipBounds& clip = {}) {
  Eigen::MatrixXd out(z.rows(), z.cols());
  for (Index j = 0; j < z.cols(); ++j)
    for (Index i = 0; i < z.rows(); ++i) out(i, j) = mask(i, j) != 0.0 ? values(i, j) : clip(z(i, j));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// ObservedMatrix

TEST(ObservedMatrix, KeepsTallInputAsIs) {
  const ObservedMatrix m(4, 3, {{0, 0, 1.0}, {3, 2, -2.0}, {1, 1, 0.5}});
  EXPECT_FALSE(m.transposed());
  EXPECT_EQ(m.rows(), 4);
  EXPECT_EQ(m.cols(), 3);
  EXPECT_EQ(m.size(), 3u);
  EXPECT_DOUBLE_EQ(m.frobenius_sq(), 1.0 + 4.0 + 0.25);
  EXPECT_DOUBLE_EQ(m.observed_fraction(), 3.0 / 12.0);
  ASSERT_TRUE(m.find(3, 2).has_value());
  EXPECT_DOUBLE_EQ(m.entries()[*m.find(3, 2)].value, -2.0);
  EXPECT_FALSE(m.find(2, 2).has_value());
}

TEST(ObservedMatrix, TransposesWideInput) {
  const ObservedMatrix m(2, 5, {{0, 4, 3.0}, {1, 0, 1.0}});
  EXPECT_TRUE(m.transposed());
  EXPECT_EQ(m.rows(), 5);
  EXPECT_EQ(m.cols(), 2);
  EXPECT_EQ(m.original_rows(), 2);
  EXPECT_EQ(m.original_cols(), 5);
  EXPECT_DOUBLE_EQ(m.dense()(0, 4), 3.0);
  EXPECT_DOUBLE_EQ(Eigen::MatrixXd(m.sparse())(4, 0), 3.0);
  EXPECT_TRUE(m.contains_original(0, 4));
  EXPECT_FALSE(m.contains_original(4, 0));
  const auto orig = m.original_entries();
  ASSERT_EQ(orig.size(), 2u);
  bool seen = false;
  for (const auto& e : orig) seen |= e.row == 0 && e.col == 4 && e.value == 3.0;
  EXPECT_TRUE(seen);
}

TEST(ObservedMatrix, RejectsBadInput) {
  EXPECT_THROW(ObservedMatrix(3, 3, {}), DataError);
  EXPECT_THROW(ObservedMatrix(0, 3, {{0, 0, 1.0}}), DataError);
  EXPECT_THROW(ObservedMatrix(3, 3, {{3, 0, 1.0}}), DataError);
  EXPECT_THROW(ObservedMatrix(3, 3, {{0, 0, 1.0}, {0, 0, 2.0}}), DataError);
  EXPECT_THROW(ObservedMatrix(3, 3, {{0, 0, std::nan("")}}), DataError);
}

TEST(ObservedMatrix, SparseAndEntriesAgree) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd a = gaussian(12, 7, rng);
  const Eigen::MatrixXd mask = random_mask(12, 7, 0.4, rng);
  const ObservedMatrix m = observe(a, mask);
  EXPECT_EQ((m.mask() - mask).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((m.dense() - a.cwiseProduct(mask)).cwiseAbs().maxCoeff(), 0.0);
  const double* vals = m.sparse().valuePtr();
  for (std::size_t k = 0; k < m.size(); ++k) EXPECT_EQ(vals[k], m.entries()[k].value);
}

// ---------------------------------------------------------------------------
// Projections and clipping

TEST(Projection, SingleCellOfOnes) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Ones(2, 2);
  const std::vector<Cell> omega{{0, 0}};
  const Eigen::MatrixXd p(project_omega(a, omega));
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(2, 2);
  expected(0, 0) = 1.0;
  EXPECT_EQ(p, expected);
}

TEST(Projection, FullSetIsIdentity) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd a = gaussian(6, 4, rng);
  const auto omega = cells_of(Eigen::MatrixXd::Ones(6, 4));
  EXPECT_EQ(Eigen::MatrixXd(project_omega(a, omega)), a);
  EXPECT_EQ(project_omega_complement(a, omega), Eigen::MatrixXd::Zero(6, 4));
}

TEST(Projection, ComplementReconstructsExactly) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::MatrixXd a = gaussian(20, 15, rng);
    const auto omega = cells_of(random_mask(20, 15, 0.3, rng));
    const Eigen::MatrixXd sum = Eigen::MatrixXd(project_omega(a, omega)) + project_omega_complement(a, omega);
    EXPECT_EQ(sum, a);
  }
}

TEST(Projection, RejectsOutOfRangeCells) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Ones(2, 2);
  const std::vector<Cell> omega{{2, 0}};
  EXPECT_THROW(project_omega(a, omega), DataError);
  EXPECT_THROW(project_omega_complement(a, omega), DataError);
}

TEST(Clip, AbsentBoundsLeaveInputUnchanged) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd a = 10.0 * gaussian(5, 5, rng);
  EXPECT_EQ(clip(a, ClipBounds{}), a);
}

TEST(Clip, HandCase) {
  Eigen::MatrixXd a(1, 3);
  a << -2.0, 3.0, 7.0;
  Eigen::MatrixXd expected(1, 3);
  expected << 1.0, 3.0, 5.0;
  EXPECT_EQ(clip(a, ClipBounds(1.0, 5.0)), expected);
}

TEST(Clip, OneSidedAndRange) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd a = (4.0 * gaussian(30, 20, rng)).array() + 3.0;
  const Eigen::MatrixXd c = clip(a, ClipBounds(1.0, 5.0));
  EXPECT_GE(c.minCoeff(), 1.0);
  EXPECT_LE(c.maxCoeff(), 5.0);
  const Eigen::MatrixXd lo = clip(a, ClipBounds(0.0, std::nullopt));
  EXPECT_GE(lo.minCoeff(), 0.0);
  EXPECT_EQ(lo.maxCoeff(), a.maxCoeff());
  EXPECT_THROW(ClipBounds(5.0, 1.0), UsageError);
  EXPECT_THROW(ClipBounds(2.0, 2.0), UsageError);
}

// ---------------------------------------------------------------------------
// LowRankFactor

TEST(LowRankFactor, SortsComponentsAndReconstructs) {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd u = orthonormal(8, 3, rng);
  const Eigen::MatrixXd v = orthonormal(5, 3, rng);
  const Eigen::Vector3d s(1.0, 3.0, 2.0);
  const LowRankFactor f(u, s, v);
  EXPECT_EQ(f.values(), Eigen::Vector3d(3.0, 2.0, 1.0));
  const Eigen::MatrixXd dense = u * s.asDiagonal() * v.transpose();
  EXPECT_LT((f.dense() - dense).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(f(4, 2), dense(4, 2), 1e-14);
  EXPECT_NEAR(f.frobenius_sq(), dense.squaredNorm(), 1e-12);
  EXPECT_NEAR(f.nuclear_norm(), 6.0, 1e-15);
  EXPECT_LT(f.orthonormality_error(), 1e-14);
  EXPECT_LT((f.transposed().dense() - dense.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(f.truncated(2).rank(), 2);
  EXPECT_EQ(f.truncated(2).values(), Eigen::Vector2d(3.0, 2.0));
}

TEST(LowRankFactor, RejectsInconsistentParts) {
  EXPECT_THROW(LowRankFactor(Eigen::MatrixXd::Zero(3, 2), Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Zero(2, 1)),
               UsageError);
  EXPECT_THROW(LowRankFactor(Eigen::MatrixXd::Zero(3, 1), -Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Zero(2, 1)),
               UsageError);
}

TEST(LowRankFactor, DropsZeroComponents) {
  std::mt19937_64 rng(7);
  const LowRankFactor f(orthonormal(6, 3, rng), Eigen::Vector3d(2.0, 0.0, 1.0), orthonormal(4, 3, rng));
  EXPECT_EQ(f.without_zeros().rank(), 2);
  EXPECT_EQ(LowRankFactor::zero(6, 4).dense(), Eigen::MatrixXd::Zero(6, 4));
}

TEST(LowRankFactor, InnerProductsAndDistances) {
  std::mt19937_64 rng(8);
  const LowRankFactor a = random_factor(9, 6, 3, rng);
  const LowRankFactor b = random_factor(9, 6, 2, rng);
  EXPECT_NEAR(inner(a, b), a.dense().cwiseProduct(b.dense()).sum(), 1e-12);
  EXPECT_NEAR(distance_sq(a, b), (a.dense() - b.dense()).squaredNorm(), 1e-10);
  const Eigen::MatrixXd values = gaussian(9, 6, rng);
  const Eigen::MatrixXd mask = random_mask(9, 6, 0.5, rng);
  const ObservedMatrix m = observe(values, mask);
  const Eigen::MatrixXd diff = (values - a.dense()).cwiseProduct(mask);
  EXPECT_NEAR(observed_residual_sq(a, m), diff.squaredNorm(), 1e-12);
}

TEST(LowRankFactor, FactorFromProduct) {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd a = gaussian(10, 3, rng);
  const Eigen::MatrixXd b = gaussian(7, 3, rng);
  const LowRankFactor f = factor_from_product(a, b);
  EXPECT_LT((f.dense() - a * b.transpose()).norm(), 1e-12 * (a * b.transpose()).norm());
  EXPECT_LT(f.orthonormality_error(), 1e-12);
}

TEST(LowRankFactor, OrientationRoundTrip) {
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd values = gaussian(3, 8, rng);
  const ObservedMatrix m = observe_all(values);
  ASSERT_TRUE(m.transposed());
  const LowRankFactor w = random_factor(8, 3, 2, rng);
  const LowRankFactor o = to_original(w, m);
  EXPECT_EQ(o.rows(), 3);
  EXPECT_LT((o.dense() - w.dense().transpose()).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((to_working(o, m).dense() - w.dense()).cwiseAbs().maxCoeff(), 1e-14);
}

// ---------------------------------------------------------------------------
// Operators

TEST(Operators, DenseSparseAndTransposed) {
  std::mt19937_64 rng(11);
  const Eigen::MatrixXd a = gaussian(7, 4, rng);
  const Eigen::SparseMatrix<double> s = a.sparseView();
  const Eigen::VectorXd x = gaussian(4, 1, rng);
  const Eigen::VectorXd w = gaussian(7, 1, rng);
  Eigen::VectorXd y;
  DenseOperator dop(a);
  dop.apply(x, y);
  EXPECT_LT((y - a * x).norm(), 1e-13);
  dop.apply_transpose(w, y);
  EXPECT_LT((y - a.transpose() * w).norm(), 1e-13);
  SparseOperator sop(s);
  sop.apply(x, y);
  EXPECT_LT((y - a * x).norm(), 1e-13);
  TransposedView<DenseOperator> t(dop);
  EXPECT_EQ(t.rows(), 4);
  t.apply(w, y);
  EXPECT_LT((y - a.transpose() * w).norm(), 1e-13);
  EXPECT_LT((materialize(t) - a.transpose()).norm(), 1e-13);
}

TEST(Composite, MatchesEntrywiseDefinition) {
  std::mt19937_64 rng(12);
  const Eigen::MatrixXd values = gaussian(30, 20, rng);
  const Eigen::MatrixXd mask = random_mask(30, 20, 0.4, rng);
  const ObservedMatrix m = observe(values, mask);
  const LowRankFactor z = random_factor(30, 20, 3, rng);
  const CompositeMatrix c(m, z);
  EXPECT_LT((c.dense() - filled_reference(values, mask, z.dense())).cwiseAbs().maxCoeff(), 1e-13)
      << "dense materialization";
  const Eigen::MatrixXd ref = filled_reference(values, mask, z.dense());
  Eigen::VectorXd y;
  for (int k = 0; k < 50; ++k) {
    const Eigen::VectorXd x = gaussian(20, 1, rng);
    c.apply(x, y);
    EXPECT_LT((y - ref * x).norm(), 1e-10 * (ref * x).norm());
    const Eigen::VectorXd w = gaussian(30, 1, rng);
    c.apply_transpose(w, y);
    EXPECT_LT((y - ref.transpose() * w).norm(), 1e-10 * (ref.transpose() * w).norm());
  }
}

TEST(Composite, ZeroLowRankPartIsSparseMatvec) {
  std::mt19937_64 rng(13);
  const Eigen::MatrixXd values = gaussian(15, 10, rng);
  const ObservedMatrix m = observe(values, random_mask(15, 10, 0.5, rng));
  const CompositeMatrix c(m, LowRankFactor::zero(15, 10));
  const Eigen::VectorXd x = gaussian(10, 1, rng);
  Eigen::VectorXd y;
  c.apply(x, y);
  EXPECT_LT((y - m.sparse() * x).norm(), 1e-13);
}

TEST(Composite, ZeroResidualIsPureLowRank) {
  // Every observation agrees with Z, so M~ = Z.
  std::mt19937_64 rng(14);
  const LowRankFactor z = random_factor(15, 10, 2, rng);
  const ObservedMatrix m = observe(z.dense(), random_mask(15, 10, 0.3, rng));
  const CompositeMatrix c(m, z);
  const Eigen::VectorXd x = gaussian(10, 1, rng);
  Eigen::VectorXd y;
  c.apply(x, y);
  EXPECT_LT((y - z.u() * z.values().asDiagonal() * z.v().transpose() * x).norm(), 1e-12);
}

TEST(Composite, FrobeniusIdentity) {
  std::mt19937_64 rng(15);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::MatrixXd values = 3.0 * gaussian(25, 18, rng);
    const Eigen::MatrixXd mask = random_mask(25, 18, 0.35, rng);
    const ObservedMatrix m = observe(values, mask);
    const LowRankFactor z = random_factor(25, 18, 4, rng);
    const CompositeMatrix c(m, z);
    const double dense = filled_reference(values, mask, z.dense()).squaredNorm();
    EXPECT_NEAR(c.frobenius_sq(), dense, 1e-9 * dense);
    const LowRankFactor w = random_factor(25, 18, 2, rng);
    const double dist = (filled_reference(values, mask, z.dense()) - w.dense()).squaredNorm();
    EXPECT_NEAR(c.distance_sq(w), dist, 1e-9 * dist);
  }
}

TEST(Composite, ClipFeedbackSparseAndDense) {
  std::mt19937_64 rng(16);
  const Eigen::MatrixXd values = gaussian(40, 30, rng);
  const Eigen::MatrixXd mask = random_mask(40, 30, 0.5, rng);
  const ObservedMatrix m = observe(values, mask);
  const LowRankFactor z = random_factor(40, 30, 3, rng);
  const double top = z.dense().cwiseAbs().maxCoeff();
  for (double bound : {0.9 * top, 0.05 * top}) {
    const ClipBounds clip(-bound, bound);
    const CompositeMatrix c(m, z, clip);
    const Eigen::MatrixXd ref = filled_reference(values, mask, z.dense(), clip);
    EXPECT_LT((c.dense() - ref).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GT(c.clipped_cells(), 0);
    const Eigen::VectorXd x = gaussian(30, 1, rng);
    Eigen::VectorXd y;
    c.apply(x, y);
    EXPECT_LT((y - ref * x).norm(), 1e-10 * (ref * x).norm());
    EXPECT_NEAR(c.frobenius_sq(), ref.squaredNorm(), 1e-9 * ref.squaredNorm());
  }
  EXPECT_TRUE(CompositeMatrix(m, z, ClipBounds(-0.05 * top, 0.05 * top)).dense_mode());
}

TEST(Composite, RejectsMismatchedShape) {
  std::mt19937_64 rng(17);
  const ObservedMatrix m = observe_all(gaussian(5, 4, rng));
  EXPECT_THROW(CompositeMatrix(m, LowRankFactor::zero(4, 4)), UsageError);
}

// ---------------------------------------------------------------------------
// Truncated SVD

TEST(TruncatedSvd, IdentitySpectrum) {
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(5, 5);
  const SvdResult r = truncated_svd(DenseOperator(id), 3);
  EXPECT_LT((r.factor.values() - Eigen::Vector3d::Ones()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(TruncatedSvd, Diagonal) {
  const Eigen::MatrixXd a = Eigen::Vector4d(4, 3, 2, 1).asDiagonal();
  const SvdResult r = truncated_svd(DenseOperator(a), 2);
  EXPECT_LT((r.factor.values() - Eigen::Vector2d(4, 3)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(TruncatedSvd, LanczosMatchesDenseOracle) {
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd s(40);
    for (Index i = 0; i < 40; ++i) s(i) = i < 10 ? 3.0 + 5.0 * unit(rng) : unit(rng);
    std::sort(s.data(), s.data() + 40, std::greater<>());
    const Eigen::MatrixXd a = orthonormal(50, 40, rng) * s.asDiagonal() * orthonormal(40, 40, rng).transpose();
    SvdOptions opts;
    opts.dense_threshold = 0;
    opts.seed = static_cast<std::uint64_t>(rep);
    const SvdResult r = truncated_svd(DenseOperator(a), 10, opts);
    EXPECT_FALSE(r.dense);
    EXPECT_LT((r.factor.values() - s.head(10)).cwiseAbs().maxCoeff(), 1e-8 * s(0));
    EXPECT_LT(r.factor.orthonormality_error(), 1e-8);
    for (Index i = 1; i < 10; ++i) EXPECT_GE(r.factor.values()(i - 1), r.factor.values()(i));
  }
}

TEST(TruncatedSvd, WideOperatorAndSeedDeterminism) {
  std::mt19937_64 rng(19);
  const Eigen::MatrixXd a = gaussian(90, 120, rng);
  SvdOptions opts;
  opts.dense_threshold = 0;
  opts.seed = 5;
  const SvdResult r1 = truncated_svd(DenseOperator(a), 4, opts);
  const SvdResult r2 = truncated_svd(DenseOperator(a), 4, opts);
  EXPECT_EQ(r1.factor.values(), r2.factor.values());
  EXPECT_EQ(r1.factor.u(), r2.factor.u());
  EXPECT_EQ(r1.factor.rows(), 90);
  EXPECT_EQ(r1.factor.cols(), 120);
  const Eigen::VectorXd ref = singular_values(a);
  EXPECT_LT((r1.factor.values() - ref.head(4)).cwiseAbs().maxCoeff(), 1e-8 * ref(0));
}

TEST(TruncatedSvd, RejectsBadRank) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(4, 3);
  EXPECT_THROW(truncated_svd(DenseOperator(a), 0), UsageError);
  EXPECT_THROW(truncated_svd(DenseOperator(a), 4), UsageError);
}

TEST(TruncatedSvd, RankDeficientOperator) {
  std::mt19937_64 rng(20);
  const Eigen::MatrixXd a = gaussian(100, 2, rng) * gaussian(2, 80, rng);
  SvdOptions opts;
  opts.dense_threshold = 0;
  const SvdResult r = truncated_svd(DenseOperator(a), 5, opts);
  const Eigen::VectorXd ref = singular_values(a);
  EXPECT_LT((r.factor.values() - ref.head(5)).cwiseAbs().maxCoeff(), 1e-8 * ref(0));
}

TEST(TrailingMeanSq, ExactRankTwo) {
  const std::vector<double> top{10.0, 5.0};
  EXPECT_DOUBLE_EQ(trailing_mean_sq(125.0, top, 5, 2), 0.0);
}

TEST(TrailingMeanSq, DirectSubstitution) {
  const std::vector<double> top{std::sqrt(5.0), std::sqrt(2.0)};
  EXPECT_NEAR(trailing_mean_sq(10.0, top, 5, 2), 1.0, 1e-15);
}

TEST(TrailingMeanSq, MatchesDenseSpectrum) {
  std::mt19937_64 rng(21);
  const Eigen::MatrixXd a = gaussian(40, 30, rng);
  const Eigen::VectorXd s = singular_values(a);
  for (Index r : {1, 5, 29}) {
    const std::vector<double> top(s.data(), s.data() + r);
    const double expected = s.tail(30 - r).squaredNorm() / static_cast<double>(30 - r);
    EXPECT_NEAR(trailing_mean_sq(a.squaredNorm(), top, 30, r), expected, 1e-9 * expected);
  }
  EXPECT_THROW(trailing_mean_sq(1.0, std::vector<double>{1.0}, 1, 1), UsageError);
}
