#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>
#include <vector>

#include "adaptimpute/error.hpp"
#include "adaptimpute/observed_matrix.hpp"

namespace adaptimpute {

/**
 * Rank-r matrix held as U diag(values) V^T.
 *
 * U and V are expected to have orthonormal columns, which makes `values` the
 * singular values of the product. The constructor reorders components so that
 * values are non-increasing; it does not re-orthogonalize.
 */
class LowRankFactor {
 public:
  LowRankFactor() = default;

  LowRankFactor(Eigen::MatrixXd u, Eigen::VectorXd values, Eigen::MatrixXd v)
      : u_(std::move(u)), values_(std::move(values)), v_(std::move(v)) {
    if (u_.cols() != values_.size() || v_.cols() != values_.size()) {
      throw UsageError("low-rank factor: U, values and V disagree on rank");
    }
    if ((values_.array() < 0.0).any()) {
      throw UsageError("low-rank factor: singular values must be nonnegative");
    }
    sort_components();
  }

  static LowRankFactor zero(Index rows, Index cols) {
    LowRankFactor z;
    z.u_.resize(rows, 0);
    z.v_.resize(cols, 0);
    z.values_.resize(0);
    return z;
  }

  Index rows() const noexcept { return u_.rows(); }
  Index cols() const noexcept { return v_.rows(); }
  Index rank() const noexcept { return values_.size(); }

  const Eigen::MatrixXd& u() const noexcept { return u_; }
  const Eigen::VectorXd& values() const noexcept { return values_; }
  const Eigen::MatrixXd& v() const noexcept { return v_; }

  double operator()(Index i, Index j) const {
    double s = 0.0;
    for (Index k = 0; k < rank(); ++k) s += u_(i, k) * values_(k) * v_(j, k);
    return s;
  }

  Eigen::MatrixXd dense() const {
    return u_ * values_.asDiagonal() * v_.transpose();
  }

  double frobenius_sq() const noexcept { return values_.squaredNorm(); }
  double nuclear_norm() const noexcept { return values_.sum(); }

  LowRankFactor transposed() const {
    LowRankFactor t;
    t.u_ = v_;
    t.v_ = u_;
    t.values_ = values_;
    return t;
  }

  /// Keep the leading `k` components.
  LowRankFactor truncated(Index k) const {
    k = std::clamp<Index>(k, 0, rank());
    LowRankFactor t;
    t.u_ = u_.leftCols(k);
    t.v_ = v_.leftCols(k);
    t.values_ = values_.head(k);
    return t;
  }

  /// Drop components whose value is at most `threshold`.
  LowRankFactor without_zeros(double threshold = 0.0) const {
    Index k = 0;
    while (k < rank() && values_(k) > threshold) ++k;
    return truncated(k);
  }

  /// Max deviation of U^T U and V^T V from the identity.
  double orthonormality_error() const {
    const Index r = rank();
    if (r == 0) return 0.0;
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(r, r);
    return std::max((u_.transpose() * u_ - id).cwiseAbs().maxCoeff(),
                    (v_.transpose() * v_ - id).cwiseAbs().maxCoeff());
  }

 private:
  void sort_components() {
    const Index r = values_.size();
    bool sorted = true;
    for (Index k = 1; k < r; ++k) {
      if (values_(k) > values_(k - 1)) { sorted = false; break; }
    }
    if (sorted) return;
    std::vector<Index> order(static_cast<std::size_t>(r));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return values_(a) > values_(b); });
    Eigen::MatrixXd u(u_.rows(), r), v(v_.rows(), r);
    Eigen::VectorXd s(r);
    for (Index k = 0; k < r; ++k) {
      const Index src = order[static_cast<std::size_t>(k)];
      u.col(k) = u_.col(src);
      v.col(k) = v_.col(src);
      s(k) = values_(src);
    }
    u_ = std::move(u);
    v_ = std::move(v);
    values_ = std::move(s);
  }

  Eigen::MatrixXd u_;
  Eigen::VectorXd values_;
  Eigen::MatrixXd v_;
};

/// <A, B>_F for two factored matrices, in O((n + d) r_a r_b).
inline double inner(const LowRankFactor& a, const LowRankFactor& b) {
  if (a.rank() == 0 || b.rank() == 0) return 0.0;
  const Eigen::MatrixXd uu = a.u().transpose() * b.u();
  const Eigen::MatrixXd vv = b.v().transpose() * a.v();
  // tr(diag(sa) uu diag(sb) vv)
  const Eigen::MatrixXd left = a.values().asDiagonal() * uu * b.values().asDiagonal();
  return left.cwiseProduct(vv.transpose()).sum();
}

/// ||A - B||_F^2 via thin QR of the stacked bases, accurate when A is close to B.
inline double distance_sq(const LowRankFactor& a, const LowRankFactor& b) {
  if (a.rank() == 0) return b.frobenius_sq();
  if (b.rank() == 0) return a.frobenius_sq();
  const Index ra = a.rank(), rb = b.rank(), k = ra + rb;
  Eigen::MatrixXd u(a.rows(), k), v(a.cols(), k);
  u << a.u(), b.u();
  v << a.v(), b.v();
  Eigen::VectorXd s(k);
  s << a.values(), -b.values();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qu(u), qv(v);
  const Index ku = std::min(a.rows(), k), kv = std::min(a.cols(), k);
  const Eigen::MatrixXd ru = qu.matrixQR().topRows(ku).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd rv = qv.matrixQR().topRows(kv).triangularView<Eigen::Upper>();
  return (ru * s.asDiagonal() * rv.transpose()).squaredNorm();
}

/// Value of Z at every observed position, in `entries()` order.
inline Eigen::VectorXd values_on_omega(const LowRankFactor& z, const ObservedMatrix& m) {
  Eigen::VectorXd out(static_cast<Index>(m.size()));
  if (z.rank() == 0) {
    out.setZero();
    return out;
  }
  // Row-major copies make the per-entry dot products contiguous.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> us =
      z.u() * z.values().asDiagonal();
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> vr = z.v();
  const auto entries = m.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    out(static_cast<Index>(k)) = us.row(entries[k].row).dot(vr.row(entries[k].col));
  }
  return out;
}

/// ||P_Ω(M_p - Z)||_F^2.
inline double observed_residual_sq(const LowRankFactor& z, const ObservedMatrix& m) {
  const Eigen::VectorXd zv = values_on_omega(z, m);
  double s = 0.0;
  const auto entries = m.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const double r = entries[k].value - zv(static_cast<Index>(k));
    s += r * r;
  }
  return s;
}

/// Express a working-orientation factor in the caller's orientation of `m`.
inline LowRankFactor to_original(const LowRankFactor& z, const ObservedMatrix& m) {
  return m.transposed() ? z.transposed() : z;
}

inline LowRankFactor to_working(const LowRankFactor& z, const ObservedMatrix& m) {
  return m.transposed() ? z.transposed() : z;
}

/// Build a factor from an explicit product A B^T (columns need not be orthogonal).
inline LowRankFactor factor_from_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Index k = a.cols();
  if (k == 0) return LowRankFactor::zero(a.rows(), b.rows());
  Eigen::HouseholderQR<Eigen::MatrixXd> qa(a), qb(b);
  const Eigen::MatrixXd qa_thin = qa.householderQ() * Eigen::MatrixXd::Identity(a.rows(), k);
  const Eigen::MatrixXd qb_thin = qb.householderQ() * Eigen::MatrixXd::Identity(b.rows(), k);
  const Eigen::MatrixXd ra = qa.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd rb = qb.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(ra * rb.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  return LowRankFactor(qa_thin * svd.matrixU(), svd.singularValues(), qb_thin * svd.matrixV());
}

}  // namespace adaptimpute
