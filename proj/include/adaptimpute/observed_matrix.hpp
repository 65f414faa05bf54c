#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptimpute/error.hpp"

namespace adaptimpute {

using Eigen::Index;

struct Cell {
  Index row = 0;
  Index col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct Entry {
  Index row = 0;
  Index col = 0;
  double value = 0.0;
};

/**
 * Sparse store of the observed entries of a partially observed matrix.
 *
 * The solvers assume at most as many columns as rows. When the input is wider
 * than tall it is transposed on construction and `transposed()` reports it;
 * `rows()`, `cols()`, `entries()` and `sparse()` all refer to this working
 * orientation, while the `original_*` accessors refer to the caller's layout.
 *
 * Entries are held in column-major order, so `entries()[k]` corresponds to
 * position `k` of the CSC value array of `sparse()`.
 */
class ObservedMatrix {
 public:
  ObservedMatrix(Index n_rows, Index n_cols, std::vector<Entry> entries)
      : original_rows_(n_rows), original_cols_(n_cols) {
    if (n_rows <= 0 || n_cols <= 0) {
      throw DataError("observed matrix must have positive dimensions");
    }
    if (entries.empty()) {
      throw DataError("observation set is empty");
    }
    for (const auto& e : entries) {
      if (e.row < 0 || e.row >= n_rows || e.col < 0 || e.col >= n_cols) {
        throw DataError("observed index (" + std::to_string(e.row) + ", " +
                        std::to_string(e.col) + ") out of range");
      }
      if (!std::isfinite(e.value)) {
        throw DataError("observed value is not finite");
      }
    }
    transposed_ = n_cols > n_rows;
    if (transposed_) {
      for (auto& e : entries) std::swap(e.row, e.col);
    }
    rows_ = transposed_ ? n_cols : n_rows;
    cols_ = transposed_ ? n_rows : n_cols;

    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      return a.col != b.col ? a.col < b.col : a.row < b.row;
    });
    for (std::size_t k = 1; k < entries.size(); ++k) {
      if (entries[k].row == entries[k - 1].row && entries[k].col == entries[k - 1].col) {
        const Index r = transposed_ ? entries[k].col : entries[k].row;
        const Index c = transposed_ ? entries[k].row : entries[k].col;
        throw DataError("duplicate observation at (" + std::to_string(r) + ", " +
                        std::to_string(c) + ")");
      }
    }
    entries_ = std::move(entries);

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(entries_.size());
    for (const auto& e : entries_) triplets.emplace_back(e.row, e.col, e.value);
    sparse_.resize(rows_, cols_);
    sparse_.setFromTriplets(triplets.begin(), triplets.end());
    sparse_.makeCompressed();

    for (const auto& e : entries_) frobenius_sq_ += e.value * e.value;
  }

  Index rows() const noexcept { return rows_; }
  Index cols() const noexcept { return cols_; }
  Index original_rows() const noexcept { return original_rows_; }
  Index original_cols() const noexcept { return original_cols_; }
  bool transposed() const noexcept { return transposed_; }

  std::size_t size() const noexcept { return entries_.size(); }
  std::span<const Entry> entries() const noexcept { return entries_; }
  const Eigen::SparseMatrix<double>& sparse() const noexcept { return sparse_; }

  /// Squared Frobenius norm of P_Ω(M_p).
  double frobenius_sq() const noexcept { return frobenius_sq_; }

  double observed_fraction() const noexcept {
    return static_cast<double>(entries_.size()) /
           (static_cast<double>(rows_) * static_cast<double>(cols_));
  }

  /// Position of (row, col) in `entries()` (working orientation), if observed.
  std::optional<std::size_t> find(Index row, Index col) const {
    if (row < 0 || row >= rows_ || col < 0 || col >= cols_) return std::nullopt;
    const auto* outer = sparse_.outerIndexPtr();
    const auto* inner = sparse_.innerIndexPtr();
    const auto* first = inner + outer[col];
    const auto* last = inner + outer[col + 1];
    const auto* it = std::lower_bound(first, last, static_cast<int>(row));
    if (it == last || *it != row) return std::nullopt;
    return static_cast<std::size_t>(it - inner);
  }

  /// Membership test in the caller's orientation.
  bool contains_original(Index row, Index col) const {
    return transposed_ ? find(col, row).has_value() : find(row, col).has_value();
  }

  /// Entries in the caller's orientation, column-major order of that layout.
  std::vector<Entry> original_entries() const {
    std::vector<Entry> out(entries_.begin(), entries_.end());
    if (transposed_) {
      for (auto& e : out) std::swap(e.row, e.col);
      std::sort(out.begin(), out.end(), [](const Entry& a, const Entry& b) {
        return a.col != b.col ? a.col < b.col : a.row < b.row;
      });
    }
    return out;
  }

  std::vector<Cell> omega() const {
    std::vector<Cell> cells;
    cells.reserve(entries_.size());
    for (const auto& e : original_entries()) cells.push_back({e.row, e.col});
    return cells;
  }

  /// 0/1 mask of Ω in the caller's orientation.
  Eigen::MatrixXd mask() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(original_rows_, original_cols_);
    for (const auto& e : entries_) {
      if (transposed_) m(e.col, e.row) = 1.0; else m(e.row, e.col) = 1.0;
    }
    return m;
  }

  /// P_Ω(M_p) densely, caller's orientation.
  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(original_rows_, original_cols_);
    for (const auto& e : entries_) {
      if (transposed_) m(e.col, e.row) = e.value; else m(e.row, e.col) = e.value;
    }
    return m;
  }

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  Index original_rows_ = 0;
  Index original_cols_ = 0;
  bool transposed_ = false;
  std::vector<Entry> entries_;
  Eigen::SparseMatrix<double> sparse_;
  double frobenius_sq_ = 0.0;
};

/// Entrywise bounds L_1 <= M_ij <= L_2; either side may be absent.
struct ClipBounds {
  std::optional<double> lower;
  std::optional<double> upper;

  ClipBounds() = default;
  ClipBounds(std::optional<double> lo, std::optional<double> hi) : lower(lo), upper(hi) {
    if (lower && upper && !(*lower < *upper)) {
      throw UsageError("clip bounds require lower < upper");
    }
  }

  bool active() const noexcept { return lower.has_value() || upper.has_value(); }

  double operator()(double v) const noexcept {
    if (lower && v < *lower) return *lower;
    if (upper && v > *upper) return *upper;
    return v;
  }

  bool violates(double v) const noexcept {
    return (lower && v < *lower) || (upper && v > *upper);
  }
};

inline Eigen::MatrixXd clip(Eigen::MatrixXd values, const ClipBounds& bounds) {
  if (!bounds.active()) return values;
  return values.unaryExpr([&](double v) { return bounds(v); });
}

inline void check_cells(std::span<const Cell> omega, Index rows, Index cols) {
  for (const auto& c : omega) {
    if (c.row < 0 || c.row >= rows || c.col < 0 || c.col >= cols) {
      throw DataError("index (" + std::to_string(c.row) + ", " + std::to_string(c.col) +
                      ") out of range for " + std::to_string(rows) + "x" +
                      std::to_string(cols) + " matrix");
    }
  }
}

/// P_Ω(A): A's values on Ω, zero elsewhere.
inline Eigen::SparseMatrix<double> project_omega(const Eigen::MatrixXd& a,
                                                 std::span<const Cell> omega) {
  check_cells(omega, a.rows(), a.cols());
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(omega.size());
  for (const auto& c : omega) triplets.emplace_back(c.row, c.col, a(c.row, c.col));
  Eigen::SparseMatrix<double> out(a.rows(), a.cols());
  // Repeated cells keep a single copy of the value.
  out.setFromTriplets(triplets.begin(), triplets.end(), [](double x, double) { return x; });
  return out;
}

/// P_Ω⊥(A): A's values off Ω, zero on Ω.
inline Eigen::MatrixXd project_omega_complement(const Eigen::MatrixXd& a,
                                                std::span<const Cell> omega) {
  check_cells(omega, a.rows(), a.cols());
  Eigen::MatrixXd out = a;
  for (const auto& c : omega) out(c.row, c.col) = 0.0;
  return out;
}

}  // namespace adaptimpute
