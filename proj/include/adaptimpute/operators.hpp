#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <concepts>
#include <optional>

#include "adaptimpute/low_rank.hpp"
#include "adaptimpute/observed_matrix.hpp"

namespace adaptimpute {

/// Anything that can compute y = A x and y = A^T x.
template <class Op>
concept LinearOperator = requires(const Op& op, const Eigen::VectorXd& x, Eigen::VectorXd& y) {
  { op.rows() } -> std::convertible_to<Index>;
  { op.cols() } -> std::convertible_to<Index>;
  op.apply(x, y);
  op.apply_transpose(x, y);
};

template <class Op>
concept Materializable = requires(const Op& op) {
  { op.dense() } -> std::convertible_to<Eigen::MatrixXd>;
};

/// Materialize any operator by applying it to the identity columns.
template <LinearOperator Op>
Eigen::MatrixXd materialize(const Op& op) {
  if constexpr (Materializable<Op>) {
    return op.dense();
  } else {
    Eigen::MatrixXd out(op.rows(), op.cols());
    Eigen::VectorXd e = Eigen::VectorXd::Zero(op.cols());
    Eigen::VectorXd y(op.rows());
    for (Index j = 0; j < op.cols(); ++j) {
      e(j) = 1.0;
      op.apply(e, y);
      out.col(j) = y;
      e(j) = 0.0;
    }
    return out;
  }
}

class DenseOperator {
 public:
  explicit DenseOperator(const Eigen::MatrixXd& a) : a_(&a) {}
  Index rows() const { return a_->rows(); }
  Index cols() const { return a_->cols(); }
  void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const { y.noalias() = *a_ * x; }
  void apply_transpose(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    y.noalias() = a_->transpose() * x;
  }
  Eigen::MatrixXd dense() const { return *a_; }

 private:
  const Eigen::MatrixXd* a_;
};

class SparseOperator {
 public:
  explicit SparseOperator(const Eigen::SparseMatrix<double>& a) : a_(&a) {}
  Index rows() const { return a_->rows(); }
  Index cols() const { return a_->cols(); }
  void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const { y.noalias() = *a_ * x; }
  void apply_transpose(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    y.noalias() = a_->transpose() * x;
  }
  Eigen::MatrixXd dense() const { return Eigen::MatrixXd(*a_); }

 private:
  const Eigen::SparseMatrix<double>* a_;
};

template <LinearOperator Op>
class TransposedView {
 public:
  explicit TransposedView(const Op& op) : op_(&op) {}
  Index rows() const { return op_->cols(); }
  Index cols() const { return op_->rows(); }
  void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const { op_->apply_transpose(x, y); }
  void apply_transpose(const Eigen::VectorXd& x, Eigen::VectorXd& y) const { op_->apply(x, y); }
  Eigen::MatrixXd dense() const { return materialize(*op_).transpose(); }

 private:
  const Op* op_;
};

/**
 * Implicit M~ = P_Ω(M_p) + P_Ω⊥(Z), stored as Z plus a sparse residual
 * R = P_Ω(M_p - Z).
 *
 * With clip bounds and feedback enabled, filled entries are clipped as well:
 * unobserved cells where Z leaves [L_1, L_2] carry an extra sparse correction
 * clip(Z_ij) - Z_ij. If more than `dense_fraction` of all cells need a
 * correction, the operator switches to an explicit dense matrix.
 */
class CompositeMatrix {
 public:
  static constexpr double kDenseFraction = 0.05;

  CompositeMatrix(const ObservedMatrix& observed, LowRankFactor low_rank,
                  const ClipBounds& clip_fill = {})
      : low_rank_(std::move(low_rank)) {
    if (low_rank_.rows() != observed.rows() || low_rank_.cols() != observed.cols()) {
      throw UsageError("composite: low-rank part does not match observed dimensions");
    }
    const Eigen::VectorXd z_on_omega = values_on_omega(low_rank_, observed);
    residual_ = observed.sparse();
    double* vals = residual_.valuePtr();
    const auto entries = observed.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      vals[k] = entries[k].value - z_on_omega(static_cast<Index>(k));
    }
    inner_z_residual_ = z_on_omega.dot(Eigen::Map<const Eigen::VectorXd>(vals, residual_.nonZeros()));
    residual_sq_ = Eigen::Map<const Eigen::VectorXd>(vals, residual_.nonZeros()).squaredNorm();

    if (clip_fill.active()) build_clip_correction(observed, clip_fill);
  }

  Index rows() const { return low_rank_.rows(); }
  Index cols() const { return low_rank_.cols(); }

  const LowRankFactor& low_rank() const { return low_rank_; }
  const Eigen::SparseMatrix<double>& residual() const { return residual_; }
  const Eigen::SparseMatrix<double>& clip_correction() const { return clip_correction_; }
  bool dense_mode() const { return dense_.has_value(); }
  Index clipped_cells() const { return clipped_cells_; }

  void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    if (dense_) {
      y.noalias() = *dense_ * x;
      return;
    }
    y.noalias() = residual_ * x;
    if (clip_correction_.nonZeros() > 0) y.noalias() += clip_correction_ * x;
    if (low_rank_.rank() > 0) {
      const Eigen::VectorXd t = low_rank_.values().cwiseProduct(low_rank_.v().transpose() * x);
      y.noalias() += low_rank_.u() * t;
    }
  }

  void apply_transpose(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    if (dense_) {
      y.noalias() = dense_->transpose() * x;
      return;
    }
    y.noalias() = residual_.transpose() * x;
    if (clip_correction_.nonZeros() > 0) y.noalias() += clip_correction_.transpose() * x;
    if (low_rank_.rank() > 0) {
      const Eigen::VectorXd t = low_rank_.values().cwiseProduct(low_rank_.u().transpose() * x);
      y.noalias() += low_rank_.v() * t;
    }
  }

  Eigen::MatrixXd dense() const {
    if (dense_) return *dense_;
    Eigen::MatrixXd out = low_rank_.dense();
    out += Eigen::MatrixXd(residual_);
    if (clip_correction_.nonZeros() > 0) out += Eigen::MatrixXd(clip_correction_);
    return out;
  }

  /// ||M~||_F^2 = ||Z||^2 + 2<Z, R> + ||R||^2 (R includes any clip correction).
  double frobenius_sq() const {
    if (dense_) return dense_->squaredNorm();
    return low_rank_.frobenius_sq() + 2.0 * (inner_z_residual_ + inner_z_clip_) + residual_sq_ +
           clip_sq_;
  }

  /// ||M~ - W||_F^2 for a factored W.
  double distance_sq(const LowRankFactor& w) const {
    if (dense_) return (*dense_ - w.dense()).squaredNorm();
    // M~ - W = (Z - W) + R
    const double zw = adaptimpute::distance_sq(low_rank_, w);
    const double r_sq = residual_sq_ + clip_sq_;
    const double z_r = inner_z_residual_ + inner_z_clip_;
    const double w_r = sparse_inner(w, residual_) + sparse_inner(w, clip_correction_);
    return std::max(0.0, zw + 2.0 * (z_r - w_r) + r_sq);
  }

 private:
  static double sparse_inner(const LowRankFactor& w, const Eigen::SparseMatrix<double>& s) {
    if (w.rank() == 0 || s.nonZeros() == 0) return 0.0;
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> us =
        w.u() * w.values().asDiagonal();
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> vr = w.v();
    double acc = 0.0;
    for (Index j = 0; j < s.outerSize(); ++j) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(s, j); it; ++it) {
        acc += it.value() * us.row(it.row()).dot(vr.row(j));
      }
    }
    return acc;
  }

  void build_clip_correction(const ObservedMatrix& observed, const ClipBounds& bounds) {
    const Index n = rows(), d = cols();
    clip_correction_.resize(n, d);
    if (low_rank_.rank() == 0) {
      // Z = 0 everywhere off Ω.
      if (!bounds.violates(0.0)) return;
    }
    std::vector<Eigen::Triplet<double>> triplets;
    const auto& pattern = observed.sparse();
    const Eigen::MatrixXd us = low_rank_.u() * low_rank_.values().asDiagonal();
    Eigen::VectorXd zcol(n);
    const auto limit = static_cast<std::size_t>(kDenseFraction * static_cast<double>(n) *
                                                static_cast<double>(d));
    bool overflow = false;
    for (Index j = 0; j < d && !overflow; ++j) {
      if (low_rank_.rank() > 0) {
        zcol.noalias() = us * low_rank_.v().row(j).transpose();
      } else {
        zcol.setZero();
      }
      Eigen::SparseMatrix<double>::InnerIterator it(pattern, j);
      for (Index i = 0; i < n; ++i) {
        while (it && it.row() < i) ++it;
        if (it && it.row() == i) continue;
        const double z = zcol(i);
        if (bounds.violates(z)) {
          triplets.emplace_back(i, j, bounds(z) - z);
          if (triplets.size() > limit) { overflow = true; break; }
        }
      }
    }
    if (overflow) {
      const Eigen::MatrixXd z = low_rank_.dense();
      Eigen::MatrixXd full = clip(z, bounds);
      for (const auto& e : observed.entries()) full(e.row, e.col) = e.value;
      Index count = 0;
      for (Index j = 0; j < d; ++j)
        for (Index i = 0; i < n; ++i)
          if (full(i, j) != z(i, j) && !observed.find(i, j)) ++count;
      clipped_cells_ = count;
      dense_ = std::move(full);
      return;
    }
    clipped_cells_ = static_cast<Index>(triplets.size());
    clip_correction_.setFromTriplets(triplets.begin(), triplets.end());
    clip_correction_.makeCompressed();
    clip_sq_ = 0.0;
    inner_z_clip_ = 0.0;
    for (Index j = 0; j < d; ++j) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(clip_correction_, j); it; ++it) {
        clip_sq_ += it.value() * it.value();
      }
    }
    inner_z_clip_ = sparse_inner(low_rank_, clip_correction_);
  }

  LowRankFactor low_rank_;
  Eigen::SparseMatrix<double> residual_;
  Eigen::SparseMatrix<double> clip_correction_;
  std::optional<Eigen::MatrixXd> dense_;
  double inner_z_residual_ = 0.0;
  double residual_sq_ = 0.0;
  double inner_z_clip_ = 0.0;
  double clip_sq_ = 0.0;
  Index clipped_cells_ = 0;
};

}  // namespace adaptimpute
