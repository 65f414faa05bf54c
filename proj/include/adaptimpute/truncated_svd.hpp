#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adaptimpute/error.hpp"
#include "adaptimpute/low_rank.hpp"
#include "adaptimpute/operators.hpp"
#include "adaptimpute/rng.hpp"

namespace adaptimpute {

struct SvdOptions {
  std::uint64_t seed = 0;
  /// Use a dense SVD when min(n, d) is at most this.
  Index dense_threshold = 64;
  /// Stop once the top-k Ritz values move by at most ritz_tol * sigma_1 between checks...
  double ritz_tol = 1e-10;
  /// ...and every top-k residual ||A^T u_i - sigma_i v_i|| is at most residual_tol * sigma_1.
  double residual_tol = 1e-12;
  /// Lanczos step cap; defaults to 10 k + 200.
  std::optional<Index> max_steps;
};

struct SvdResult {
  LowRankFactor factor;
  Eigen::VectorXd residuals;
  Index steps = 0;
  bool dense = false;
};

namespace detail {

inline Eigen::VectorXd random_unit(Index size, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd x(size);
  for (Index i = 0; i < size; ++i) x(i) = normal(rng);
  return x / x.norm();
}

/// Two passes of classical Gram-Schmidt against the first `count` columns of `basis`.
inline void reorthogonalize(const Eigen::MatrixXd& basis, Index count, Eigen::VectorXd& x) {
  if (count == 0) return;
  for (int pass = 0; pass < 2; ++pass) {
    const Eigen::VectorXd h = basis.leftCols(count).transpose() * x;
    x.noalias() -= basis.leftCols(count) * h;
  }
}

/// Random unit vector orthogonal to the first `count` columns of `basis`.
inline Eigen::VectorXd fresh_direction(const Eigen::MatrixXd& basis, Index count, Rng& rng) {
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::VectorXd x = random_unit(basis.rows(), rng);
    reorthogonalize(basis, count, x);
    const double nrm = x.norm();
    if (nrm > 1e-8) return x / nrm;
  }
  throw NumericalError("truncated SVD: could not extend Krylov basis");
}

template <LinearOperator Op>
Eigen::VectorXd transpose_residuals(const Op& op, const LowRankFactor& f) {
  Eigen::VectorXd res(f.rank());
  Eigen::VectorXd y(op.cols());
  for (Index i = 0; i < f.rank(); ++i) {
    op.apply_transpose(f.u().col(i), y);
    res(i) = (y - f.values()(i) * f.v().col(i)).norm();
  }
  return res;
}

template <LinearOperator Op>
SvdResult dense_svd(const Op& op, Index k) {
  const Eigen::MatrixXd a = materialize(op);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdResult out;
  out.factor = LowRankFactor(svd.matrixU().leftCols(k), svd.singularValues().head(k),
                             svd.matrixV().leftCols(k));
  out.residuals = transpose_residuals(op, out.factor);
  out.dense = true;
  return out;
}

struct BidiagonalSvd {
  Eigen::VectorXd values;
  Eigen::MatrixXd left;   // m x k
  Eigen::MatrixXd right;  // m x k
};

/// Solves (T - shift I) x = b in place for symmetric tridiagonal T with zero
/// diagonal and off-diagonal `off`, by LU with partial pivoting.
inline void tridiagonal_shift_solve(const Eigen::VectorXd& off, double shift, double tiny,
                                    Eigen::VectorXd& b) {
  const Index n = b.size();
  Eigen::VectorXd dl = off, du = off, du2 = Eigen::VectorXd::Zero(std::max<Index>(n - 2, 0));
  Eigen::VectorXd dd = Eigen::VectorXd::Constant(n, -shift);
  std::vector<char> swapped(static_cast<std::size_t>(std::max<Index>(n - 1, 0)), 0);
  for (Index i = 0; i + 1 < n; ++i) {
    if (std::abs(dd(i)) >= std::abs(dl(i))) {
      if (dd(i) == 0.0) dd(i) = tiny;
      const double f = dl(i) / dd(i);
      dl(i) = f;
      dd(i + 1) -= f * du(i);
    } else {
      const double f = dd(i) / dl(i);
      dd(i) = dl(i);
      dl(i) = f;
      const double t = du(i);
      du(i) = dd(i + 1);
      dd(i + 1) = t - f * dd(i + 1);
      if (i + 2 < n) {
        du2(i) = du(i + 1);
        du(i + 1) = -f * du(i + 1);
      }
      swapped[static_cast<std::size_t>(i)] = 1;
    }
  }
  if (dd(n - 1) == 0.0) dd(n - 1) = tiny;
  for (Index i = 0; i + 1 < n; ++i) {
    if (!swapped[static_cast<std::size_t>(i)]) {
      b(i + 1) -= dl(i) * b(i);
    } else {
      const double t = b(i);
      b(i) = b(i + 1);
      b(i + 1) = t - dl(i) * b(i);
    }
  }
  for (Index i = n - 1; i >= 0; --i) {
    double v = b(i);
    if (i + 1 < n) v -= du(i) * b(i + 1);
    if (i + 2 < n) v -= du2(i) * b(i + 2);
    b(i) = v / dd(i);
  }
}

/**
 * Leading k singular values (and optionally vectors) of the m x m upper
 * bidiagonal matrix with diagonal alpha and superdiagonal beta, via the
 * symmetric tridiagonal Golub-Kahan form [0 B^T; B 0] (perfect-shuffle order).
 * Vectors come from inverse iteration; if they fail an orthogonality and
 * residual check, the full eigensolver (or a dense SVD for tiny values) is used.
 */
inline BidiagonalSvd bidiagonal_svd(const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta,
                                    Index m, Index k, bool vectors) {
  BidiagonalSvd out;
  const Index size = 2 * m;
  Eigen::VectorXd sub(size - 1);
  for (Index i = 0; i < m; ++i) {
    sub(2 * i) = alpha(i);
    if (i + 1 < m) sub(2 * i + 1) = beta(i);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(Eigen::VectorXd::Zero(size), sub, Eigen::EigenvaluesOnly);
  out.values.resize(k);
  for (Index i = 0; i < k; ++i) out.values(i) = std::max(0.0, es.eigenvalues()(size - 1 - i));
  if (!vectors) return out;

  const double top = out.values(0);
  const auto unshuffle = [&](Index i, const Eigen::VectorXd& x) {
    for (Index j = 0; j < m; ++j) {
      out.right(j, i) = x(2 * j);
      out.left(j, i) = x(2 * j + 1);
    }
    out.right.col(i).normalize();
    out.left.col(i).normalize();
  };
  out.left.resize(m, k);
  out.right.resize(m, k);
  if (top > 0.0 && out.values(k - 1) > 1e-6 * top) {
    constexpr double kEps = std::numeric_limits<double>::epsilon();
    const double tiny = kEps * top;
    bool ok = true;
    for (Index i = 0; i < k && ok; ++i) {
      Eigen::VectorXd x = Eigen::VectorXd::Ones(size);
      for (int pass = 0; pass < 3; ++pass) {
        tridiagonal_shift_solve(sub, out.values(i), tiny, x);
        // Against earlier vectors of (nearly) the same eigenvalue.
        for (Index j = 0; j < i; ++j) {
          if (out.values(j) - out.values(i) > 1e-3 * top) continue;
          Eigen::VectorXd prev(size);
          for (Index q = 0; q < m; ++q) {
            prev(2 * q) = out.right(q, j);
            prev(2 * q + 1) = out.left(q, j);
          }
          prev /= prev.norm();
          x -= prev.dot(x) * prev;
        }
        const double nrm = x.norm();
        if (!(nrm > 0.0) || !std::isfinite(nrm)) {
          ok = false;
          break;
        }
        x /= nrm;
      }
      if (!ok) break;
      Eigen::VectorXd tx = Eigen::VectorXd::Zero(size);
      for (Index q = 0; q + 1 < size; ++q) {
        tx(q) += sub(q) * x(q + 1);
        tx(q + 1) += sub(q) * x(q);
      }
      if ((tx - out.values(i) * x).norm() > 1e3 * kEps * top) ok = false;
      unshuffle(i, x);
    }
    if (ok) {
      const Eigen::MatrixXd gl = out.left.transpose() * out.left - Eigen::MatrixXd::Identity(k, k);
      const Eigen::MatrixXd gr = out.right.transpose() * out.right - Eigen::MatrixXd::Identity(k, k);
      if (gl.cwiseAbs().maxCoeff() <= 1e-12 && gr.cwiseAbs().maxCoeff() <= 1e-12) return out;
    }
    es.computeFromTridiagonal(Eigen::VectorXd::Zero(size), sub, Eigen::ComputeEigenvectors);
    for (Index i = 0; i < k; ++i) unshuffle(i, es.eigenvectors().col(size - 1 - i));
    return out;
  }
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(m, m);
  for (Index i = 0; i < m; ++i) {
    b(i, i) = alpha(i);
    if (i + 1 < m) b(i, i + 1) = beta(i);
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeFullU | Eigen::ComputeFullV);
  out.values = svd.singularValues().head(k);
  out.left = svd.matrixU().leftCols(k);
  out.right = svd.matrixV().leftCols(k);
  return out;
}

/// Golub-Kahan-Lanczos bidiagonalization with full reorthogonalization. Requires rows >= cols.
template <LinearOperator Op>
SvdResult lanczos_svd(const Op& op, Index k, const SvdOptions& opts) {
  const Index n = op.rows();
  const Index d = op.cols();
  const Index cap = std::min<Index>(d, std::max<Index>(k, opts.max_steps.value_or(10 * k + 200)));

  Rng rng(mix_seed(opts.seed));
  Eigen::MatrixXd left(n, cap);
  Eigen::MatrixXd right(d, cap + 1);
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(cap);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(cap);
  right.col(0) = random_unit(d, rng);

  Eigen::VectorXd w(n), z(d);
  double scale = 0.0;
  Index steps = 0;
  Index last_check = 0;
  bool converged = false;
  Eigen::VectorXd prev_ritz;
  BidiagonalSvd ritz;
  Eigen::VectorXd resid = Eigen::VectorXd::Constant(k, std::numeric_limits<double>::infinity());

  constexpr double kBreakdown = 1e-13;

  auto with_vectors = [&](Index m) {
    ritz = bidiagonal_svd(alpha, beta, m, k, true);
    for (Index i = 0; i < k; ++i) resid(i) = std::abs(beta(m - 1) * ritz.left(m - 1, i));
  };

  for (Index j = 0; j < cap; ++j) {
    op.apply(right.col(j), w);
    if (j > 0) w.noalias() -= beta(j - 1) * left.col(j - 1);
    reorthogonalize(left, j, w);
    double a = w.norm();
    if (a == 0.0 || a <= kBreakdown * scale) {
      w = fresh_direction(left, j, rng);
      a = 0.0;
    } else {
      w /= a;
    }
    alpha(j) = a;
    left.col(j) = w;

    op.apply_transpose(left.col(j), z);
    z.noalias() -= a * right.col(j);
    reorthogonalize(right, j + 1, z);
    steps = j + 1;
    const bool exhausted = steps == d;
    double b = exhausted ? 0.0 : z.norm();
    scale = std::max(scale, std::hypot(a, b));
    if (!exhausted) {
      if (b <= kBreakdown * scale) {
        right.col(j + 1) = fresh_direction(right, j + 1, rng);
        b = 0.0;
      } else {
        right.col(j + 1) = z / b;
      }
    }
    beta(j) = b;

    // A check costs O(steps^2); a step costs O(steps (n + d)). Space checks to match.
    const Index interval = std::max<Index>({1, steps / 10, steps * steps / (n + d)});
    const bool due = steps >= k && (steps == k || exhausted || steps == cap ||
                                    steps - last_check >= interval);
    if (!due) continue;
    last_check = steps;
    // Cheap value-only test first; vectors and residuals only once the values settle.
    const Eigen::VectorXd values = bidiagonal_svd(alpha, beta, steps, k, false).values;
    const double top = values(0);
    bool settled = exhausted || top == 0.0;
    if (!settled && prev_ritz.size() == k) {
      settled = ((values - prev_ritz).cwiseAbs().array() <= opts.ritz_tol * top).all();
    }
    prev_ritz = values;
    if (!settled && steps < cap) continue;
    with_vectors(steps);
    if (exhausted || top == 0.0 || (settled && (resid.array() <= opts.residual_tol * top).all())) {
      converged = true;
      break;
    }
  }

  if (!converged) {
    throw SvdNotConverged("truncated SVD did not converge in " + std::to_string(steps) + " steps",
                          std::vector<double>(resid.data(), resid.data() + resid.size()), steps);
  }

  SvdResult out;
  out.factor = LowRankFactor(left.leftCols(steps) * ritz.left, ritz.values,
                             right.leftCols(steps) * ritz.right);
  out.residuals = resid;
  out.steps = steps;
  return out;
}

}  // namespace detail

/**
 * Top-k singular triplets of an implicit operator.
 *
 * Small problems (min(n, d) <= dense_threshold) and requests for more than
 * half of the spectrum are handed to a dense SVD; everything else goes through
 * Lanczos bidiagonalization with a seeded start vector, so results are
 * deterministic for a fixed seed.
 */
template <LinearOperator Op>
SvdResult truncated_svd(const Op& op, Index k, const SvdOptions& opts = {}) {
  const Index n = op.rows();
  const Index d = op.cols();
  const Index m = std::min(n, d);
  if (k < 1 || k > m) {
    throw UsageError("truncated SVD: k = " + std::to_string(k) + " outside [1, " +
                     std::to_string(m) + "]");
  }
  const bool dense = m <= opts.dense_threshold || 2 * k > m;
  if (n < d) {
    const TransposedView<Op> t(op);
    SvdResult out = dense ? detail::dense_svd(t, k) : detail::lanczos_svd(t, k, opts);
    out.factor = out.factor.transposed();
    return out;
  }
  return dense ? detail::dense_svd(op, k) : detail::lanczos_svd(op, k, opts);
}

/// Mean of the trailing d - r squared singular values, via ||A||_F^2 - sum_{i<=r} sigma_i^2.
inline double trailing_mean_sq(double frobenius_sq, std::span<const double> top_values, Index d,
                               Index r) {
  if (r >= d) throw UsageError("trailing_mean_sq: r must be smaller than d");
  if (static_cast<Index>(top_values.size()) < r) {
    throw UsageError("trailing_mean_sq: fewer than r leading values supplied");
  }
  double head = 0.0;
  for (Index i = 0; i < r; ++i) head += top_values[static_cast<std::size_t>(i)] * top_values[static_cast<std::size_t>(i)];
  return std::max(0.0, (frobenius_sq - head) / static_cast<double>(d - r));
}

}  // namespace adaptimpute
