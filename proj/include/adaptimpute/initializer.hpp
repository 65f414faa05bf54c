#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptimpute/error.hpp"
#include "adaptimpute/low_rank.hpp"
#include "adaptimpute/observed_matrix.hpp"
#include "adaptimpute/operators.hpp"
#include "adaptimpute/rng.hpp"
#include "adaptimpute/truncated_svd.hpp"

namespace adaptimpute {

enum class SignMethod { exhaustive, svd_sign, regression };

inline std::string to_string(SignMethod m) {
  switch (m) {
    case SignMethod::exhaustive: return "exhaustive";
    case SignMethod::svd_sign: return "svd-sign";
    case SignMethod::regression: return "regression";
  }
  return "?";
}

inline SignMethod parse_sign_method(const std::string& s) {
  if (s == "exhaustive") return SignMethod::exhaustive;
  if (s == "svd-sign" || s == "svd_sign") return SignMethod::svd_sign;
  if (s == "regression") return SignMethod::regression;
  throw UsageError("unknown sign method '" + s + "'");
}

inline constexpr Index kMaxExhaustiveRank = 12;

/// p_hat = |Ω| / (n d).
inline double estimate_p(const ObservedMatrix& m) { return m.observed_fraction(); }

enum class GramSide {
  columns,  ///< Σ_p = M_p^T M_p - (1 - p) diag(M_p^T M_p), d x d
  rows,     ///< Σ_tp = M_p M_p^T - (1 - p) diag(M_p M_p^T), n x n
};

/// Implicit debiased Gram operator; never forms M_p^T M_p.
class SigmaOperator {
 public:
  SigmaOperator(const ObservedMatrix& m, double p_hat, GramSide side)
      : m_(&m), p_hat_(p_hat), side_(side) {
    if (!(p_hat > 0.0 && p_hat <= 1.0)) throw UsageError("p_hat must lie in (0, 1]");
    diag_ = Eigen::VectorXd::Zero(dim());
    for (const auto& e : m.entries()) diag_(side == GramSide::columns ? e.col : e.row) += e.value * e.value;
  }

  Index rows() const { return dim(); }
  Index cols() const { return dim(); }

  void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    const auto& s = m_->sparse();
    if (side_ == GramSide::columns) {
      const Eigen::VectorXd t = s * x;
      y.noalias() = s.transpose() * t;
    } else {
      const Eigen::VectorXd t = s.transpose() * x;
      y.noalias() = s * t;
    }
    y.array() -= (1.0 - p_hat_) * diag_.array() * x.array();
  }
  void apply_transpose(const Eigen::VectorXd& x, Eigen::VectorXd& y) const { apply(x, y); }

  Eigen::MatrixXd dense() const {
    const Eigen::MatrixXd s(m_->sparse());
    Eigen::MatrixXd g = side_ == GramSide::columns ? Eigen::MatrixXd(s.transpose() * s)
                                                   : Eigen::MatrixXd(s * s.transpose());
    g.diagonal() -= (1.0 - p_hat_) * diag_;
    return g;
  }

  /// trace(Σ) = p_hat ||P_Ω(M_p)||_F^2.
  double trace() const { return p_hat_ * m_->frobenius_sq(); }
  const Eigen::VectorXd& gram_diagonal() const { return diag_; }

 private:
  Index dim() const { return side_ == GramSide::columns ? m_->cols() : m_->rows(); }

  const ObservedMatrix* m_;
  double p_hat_;
  GramSide side_;
  Eigen::VectorXd diag_;
};

struct EigenPairs {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

/**
 * Leading r algebraic eigenpairs of a symmetric operator through truncated_svd.
 * The operator may be indefinite, so 2r singular triplets are taken and each
 * is signed by <u, v> before ranking.
 */
template <LinearOperator Op>
EigenPairs top_eigenpairs(const Op& op, Index r, const SvdOptions& opts) {
  const Index dim = op.rows();
  const Index k = std::min<Index>(dim, 2 * r);
  const SvdResult svd = truncated_svd(op, k, opts);
  std::vector<double> signed_vals(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) {
    const double s = svd.factor.u().col(i).dot(svd.factor.v().col(i)) < 0.0 ? -1.0 : 1.0;
    signed_vals[static_cast<std::size_t>(i)] = s * svd.factor.values()(i);
  }
  std::vector<Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return signed_vals[static_cast<std::size_t>(a)] > signed_vals[static_cast<std::size_t>(b)];
  });
  EigenPairs out;
  out.values.resize(r);
  out.vectors.resize(dim, r);
  for (Index i = 0; i < r; ++i) {
    const Index src = order[static_cast<std::size_t>(i)];
    out.values(i) = signed_vals[static_cast<std::size_t>(src)];
    out.vectors.col(i) = svd.factor.v().col(src);
  }
  return out;
}

struct DebiasedSpectrum {
  double alpha_tilde = 0.0;
  Eigen::VectorXd tau_hat;
  Eigen::VectorXd lambda_hat;
  /// Components where eig_i - alpha_tilde < 0 was clamped to zero.
  std::vector<bool> clamped;
};

/**
 * alpha~ = mean of the trailing d - r eigenvalues of Σ_p (from the trace),
 * lambda^_i = sqrt(max(0, eig_i - alpha~)) / p_hat, tau^_i = eig_i - lambda^_i.
 */
inline DebiasedSpectrum debiased_spectrum(std::span<const double> eigs, double trace, Index d,
                                          Index r, double p_hat) {
  if (r >= d) throw UsageError("debiased_spectrum: r must be smaller than d");
  if (static_cast<Index>(eigs.size()) < r) throw UsageError("debiased_spectrum: need r eigenvalues");
  DebiasedSpectrum out;
  double head = 0.0;
  for (Index i = 0; i < r; ++i) head += eigs[static_cast<std::size_t>(i)];
  out.alpha_tilde = (trace - head) / static_cast<double>(d - r);
  out.tau_hat.resize(r);
  out.lambda_hat.resize(r);
  out.clamped.assign(static_cast<std::size_t>(r), false);
  for (Index i = 0; i < r; ++i) {
    const double eig = eigs[static_cast<std::size_t>(i)];
    double radicand = eig - out.alpha_tilde;
    if (radicand < 0.0) {
      radicand = 0.0;
      out.clamped[static_cast<std::size_t>(i)] = true;
    }
    out.lambda_hat(i) = std::sqrt(radicand) / p_hat;
    out.tau_hat(i) = eig - out.lambda_hat(i);
  }
  return out;
}

/// Normal equations of the sign fit: columns x_i = λ^_i (U^_i V^_i^T) restricted to Ω.
struct SignDesign {
  Eigen::MatrixXd gram;    ///< X^T X
  Eigen::VectorXd cross;   ///< X^T y
  double target_sq = 0.0;  ///< y^T y

  /// ||X s - y||^2 = ||P(sum s_i λ^_i U^_i V^_i^T - M_p)||_F^2
  double objective(std::span<const int> signs) const {
    Eigen::VectorXd s(static_cast<Index>(signs.size()));
    for (std::size_t i = 0; i < signs.size(); ++i) s(static_cast<Index>(i)) = signs[i];
    return std::max(0.0, s.dot(gram * s) - 2.0 * s.dot(cross) + target_sq);
  }
};

inline SignDesign sign_design(const ObservedMatrix& m, const Eigen::MatrixXd& u_hat,
                              const Eigen::MatrixXd& v_hat, const Eigen::VectorXd& lambda_hat) {
  const Index r = lambda_hat.size();
  const auto entries = m.entries();
  Eigen::MatrixXd x(static_cast<Index>(entries.size()), r);
  Eigen::VectorXd y(static_cast<Index>(entries.size()));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    for (Index i = 0; i < r; ++i) x(static_cast<Index>(k), i) = lambda_hat(i) * u_hat(e.row, i) * v_hat(e.col, i);
    y(static_cast<Index>(k)) = e.value;
  }
  SignDesign out;
  out.gram = x.transpose() * x;
  out.cross = x.transpose() * y;
  out.target_sq = y.squaredNorm();
  return out;
}

inline int sign_of(double x) { return x < 0.0 ? -1 : 1; }

/**
 * Signs s_i for M^ = sum s_i λ^_i U^_i V^_i^T.
 *
 *  - exhaustive: global minimizer of the observed-entry fit over {-1, 1}^r (r <= 12)
 *  - svd-sign:   s_i = sign<V^_i, v_i(M_p)> * sign<U^_i, u_i(M_p)>
 *  - regression: signs of the no-intercept least-squares coefficients of y on X
 */
inline std::vector<int> resolve_signs(const ObservedMatrix& m, const Eigen::MatrixXd& u_hat,
                                      const Eigen::MatrixXd& v_hat,
                                      const Eigen::VectorXd& lambda_hat, SignMethod method,
                                      std::uint64_t seed = 0) {
  const Index r = lambda_hat.size();
  std::vector<int> signs(static_cast<std::size_t>(r), 1);
  if (r == 0) return signs;
  switch (method) {
    case SignMethod::exhaustive: {
      if (r > kMaxExhaustiveRank) {
        throw UsageError("exhaustive sign search is limited to r <= 12 (got r = " +
                         std::to_string(r) + ")");
      }
      const SignDesign design = sign_design(m, u_hat, v_hat, lambda_hat);
      double best = std::numeric_limits<double>::infinity();
      std::vector<int> trial(static_cast<std::size_t>(r));
      // Bit i set means s_i = -1; mask 0 (all +1) is tried first and wins ties.
      for (std::uint32_t mask = 0; mask < (1u << r); ++mask) {
        for (Index i = 0; i < r; ++i) trial[static_cast<std::size_t>(i)] = (mask >> i) & 1u ? -1 : 1;
        const double obj = design.objective(trial);
        if (obj < best) {
          best = obj;
          signs = trial;
        }
      }
      return signs;
    }
    case SignMethod::svd_sign: {
      SvdOptions opts;
      opts.seed = seed;
      const SvdResult svd = truncated_svd(SparseOperator(m.sparse()), r, opts);
      for (Index i = 0; i < r; ++i) {
        signs[static_cast<std::size_t>(i)] =
            sign_of(v_hat.col(i).dot(svd.factor.v().col(i))) *
            sign_of(u_hat.col(i).dot(svd.factor.u().col(i)));
      }
      return signs;
    }
    case SignMethod::regression: {
      const SignDesign design = sign_design(m, u_hat, v_hat, lambda_hat);
      const Eigen::VectorXd coef =
          Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(design.gram).solve(design.cross);
      for (Index i = 0; i < r; ++i) signs[static_cast<std::size_t>(i)] = sign_of(coef(i));
      return signs;
    }
  }
  return signs;
}

struct InitializerResult {
  /// M^ with the signs folded into U (working orientation of the observed matrix).
  LowRankFactor estimate;
  double p_hat = 0.0;
  double alpha_tilde = 0.0;
  Eigen::VectorXd sigma_eigenvalues;
  Eigen::VectorXd tau_hat;
  std::vector<int> signs;
  SignMethod sign_method_used = SignMethod::exhaustive;
  std::vector<bool> uninformative;
};

inline SignMethod default_sign_method(Index r) {
  return r <= kMaxExhaustiveRank ? SignMethod::exhaustive : SignMethod::svd_sign;
}

/// One-step estimate from the debiased column and row Gram operators.
inline InitializerResult initialize(const ObservedMatrix& m, Index r,
                                    std::optional<SignMethod> sign_method = {},
                                    std::uint64_t seed = 0) {
  const Index d = m.cols();
  if (r < 1 || r >= d) {
    throw UsageError("rank must satisfy 1 <= r < d (r = " + std::to_string(r) +
                     ", d = " + std::to_string(d) + ")");
  }
  InitializerResult out;
  out.p_hat = estimate_p(m);

  SvdOptions opts;
  opts.seed = derive_seed(seed, 1);
  const SigmaOperator sigma_cols(m, out.p_hat, GramSide::columns);
  const EigenPairs right = top_eigenpairs(sigma_cols, r, opts);
  opts.seed = derive_seed(seed, 2);
  const SigmaOperator sigma_rows(m, out.p_hat, GramSide::rows);
  const EigenPairs left = top_eigenpairs(sigma_rows, r, opts);

  const std::span<const double> eigs(right.values.data(), static_cast<std::size_t>(r));
  const DebiasedSpectrum spectrum = debiased_spectrum(eigs, sigma_cols.trace(), d, r, out.p_hat);
  out.sigma_eigenvalues = right.values;
  out.alpha_tilde = spectrum.alpha_tilde;
  out.tau_hat = spectrum.tau_hat;
  out.uninformative = spectrum.clamped;

  out.sign_method_used = sign_method.value_or(default_sign_method(r));
  out.signs = resolve_signs(m, left.vectors, right.vectors, spectrum.lambda_hat,
                            out.sign_method_used, derive_seed(seed, 3));
  Eigen::MatrixXd u = left.vectors;
  for (Index i = 0; i < r; ++i) u.col(i) *= out.signs[static_cast<std::size_t>(i)];
  out.estimate = LowRankFactor(std::move(u), spectrum.lambda_hat, right.vectors);
  return out;
}

}  // namespace adaptimpute
