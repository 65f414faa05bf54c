#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "adaptimpute/error.hpp"
#include "adaptimpute/low_rank.hpp"
#include "adaptimpute/observed_matrix.hpp"
#include "adaptimpute/operators.hpp"
#include "adaptimpute/report.hpp"
#include "adaptimpute/rng.hpp"
#include "adaptimpute/truncated_svd.hpp"

namespace adaptimpute {

/// Per-index singular value thresholds tau_1..tau_d, all >= 0.
class ThresholdVector {
 public:
  ThresholdVector() = default;
  explicit ThresholdVector(Eigen::VectorXd values) : values_(std::move(values)) {
    for (Index i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_(i)) || values_(i) < 0.0) {
        throw UsageError("thresholds must be finite and nonnegative");
      }
    }
  }
  static ThresholdVector constant(Index d, double tau) {
    return ThresholdVector(Eigen::VectorXd::Constant(d, tau));
  }

  Index size() const noexcept { return values_.size(); }
  double operator()(Index i) const { return values_(i); }
  const Eigen::VectorXd& values() const noexcept { return values_; }

  bool is_constant() const {
    return values_.size() == 0 || (values_.array() == values_(0)).all();
  }
  bool non_increasing() const {
    for (Index i = 1; i < values_.size(); ++i)
      if (values_(i) > values_(i - 1)) return false;
    return true;
  }

 private:
  Eigen::VectorXd values_;
};

/// Isotonic (non-increasing) least-squares fit by pool-adjacent-violators.
inline Eigen::VectorXd isotonic_non_increasing(const Eigen::VectorXd& y) {
  std::vector<double> mean;
  std::vector<Index> width;
  for (Index i = 0; i < y.size(); ++i) {
    mean.push_back(y(i));
    width.push_back(1);
    while (mean.size() > 1 && mean[mean.size() - 2] < mean.back()) {
      const double w1 = static_cast<double>(width[width.size() - 2]);
      const double w2 = static_cast<double>(width.back());
      const double m = (w1 * mean[mean.size() - 2] + w2 * mean.back()) / (w1 + w2);
      width[width.size() - 2] += width.back();
      mean[mean.size() - 2] = m;
      mean.pop_back();
      width.pop_back();
    }
  }
  Eigen::VectorXd out(y.size());
  Index k = 0;
  for (std::size_t b = 0; b < mean.size(); ++b)
    for (Index j = 0; j < width[b]; ++j) out(k++) = mean[b];
  return out;
}

/// Phi (Delta - tau)_+ Psi^T from a full SVD of X; zero components are dropped.
inline LowRankFactor thresholded_svd(const Eigen::MatrixXd& x, const ThresholdVector& tau) {
  const Index m = std::min(x.rows(), x.cols());
  if (tau.size() != m) {
    throw UsageError("thresholded_svd: need " + std::to_string(m) + " thresholds, got " +
                     std::to_string(tau.size()));
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd shrunk = (svd.singularValues() - tau.values()).cwiseMax(0.0);
  return LowRankFactor(svd.matrixU(), shrunk, svd.matrixV()).without_zeros();
}

struct ThresholdOptions {
  /// Keep at most this many components (hard truncation after shrinking).
  std::optional<Index> rank_cap;
  /// Project the shrunk values onto the non-increasing cone before clamping at zero.
  bool isotonic = false;
  /// Number of triplets to try first; grown until the remaining ones provably vanish.
  Index rank_hint = 0;
  SvdOptions svd;
};

struct ThresholdStep {
  LowRankFactor factor;
  Index computed = 0;
  Index svd_steps = 0;
};

/**
 * Thresholded SVD of an implicit operator. Only as many leading triplets are
 * computed as needed: the k-th value must already sit below every remaining
 * threshold, so the omitted components would shrink to zero.
 */
template <LinearOperator Op>
ThresholdStep threshold_operator(const Op& op, const ThresholdVector& tau,
                                 const ThresholdOptions& opts = {}) {
  const Index m = std::min(op.rows(), op.cols());
  if (tau.size() != m) {
    throw UsageError("thresholded SVD: need " + std::to_string(m) + " thresholds, got " +
                     std::to_string(tau.size()));
  }
  if (opts.rank_cap && *opts.rank_cap < 1) throw UsageError("rank cap must be positive");
  const Index cap = opts.rank_cap ? std::min(*opts.rank_cap, m) : m;

  Eigen::VectorXd suffix_min(m);
  suffix_min(m - 1) = tau(m - 1);
  for (Index i = m - 2; i >= 0; --i) suffix_min(i) = std::min(tau(i), suffix_min(i + 1));

  // With non-decreasing thresholds the shrunk values are already ordered.
  bool ordered = true;
  for (Index i = 1; i < m && ordered; ++i) ordered = tau(i) >= tau(i - 1);
  const bool isotonic = opts.isotonic && !ordered;
  const bool cap_only = opts.rank_cap.has_value() && !isotonic;
  const Index limit = cap_only ? cap : m;
  Index k = cap_only ? cap : std::clamp<Index>(std::max<Index>(opts.rank_hint + 5, 10), 1, limit);

  ThresholdStep step;
  SvdResult svd;
  for (;;) {
    svd = truncated_svd(op, k, opts.svd);
    step.svd_steps += svd.steps;
    const double last = svd.factor.values()(k - 1);
    if (k >= limit || last <= suffix_min(k - 1)) break;
    // Past a quarter of the spectrum one full SVD beats further Lanczos restarts.
    k = 2 * k > limit / 4 ? limit : 2 * k;
  }
  step.computed = k;

  Eigen::VectorXd shrunk = svd.factor.values() - tau.values().head(k);
  if (isotonic) shrunk = isotonic_non_increasing(shrunk);
  shrunk = shrunk.cwiseMax(0.0);
  const Index keep = std::min(k, cap);
  step.factor = LowRankFactor(svd.factor.u().leftCols(keep), shrunk.head(keep),
                              svd.factor.v().leftCols(keep))
                    .without_zeros();
  return step;
}

/// sum_i tau_i sigma_i(Z) with Z's values in non-increasing order.
inline double threshold_penalty(const LowRankFactor& z, const ThresholdVector& tau) {
  if (z.rank() > tau.size()) throw UsageError("penalty: rank exceeds number of thresholds");
  return z.rank() == 0 ? 0.0 : tau.values().head(z.rank()).dot(z.values());
}

namespace detail {

inline void check_shape(const LowRankFactor& z, const ObservedMatrix& m, const ThresholdVector& tau) {
  if (z.rows() != m.rows() || z.cols() != m.cols()) {
    throw UsageError("objective: estimate does not match the observed matrix");
  }
  if (tau.size() != m.cols()) throw UsageError("objective: need one threshold per column");
}

}  // namespace detail

/// f_tau(Z) = (1/2nd) ||P(M_p - Z)||^2 + sum_i tau_i sigma_i(Z) / nd. Working orientation.
inline double objective_f(const LowRankFactor& z, const ObservedMatrix& m, const ThresholdVector& tau) {
  detail::check_shape(z, m, tau);
  const double nd = static_cast<double>(m.rows()) * static_cast<double>(m.cols());
  return observed_residual_sq(z, m) / (2.0 * nd) + threshold_penalty(z, tau) / nd;
}

/// Q_tau(Z | Z_prev) = (1/2nd) ||P(M_p) + P_perp(Z_prev) - Z||^2 + sum_i tau_i sigma_i(Z) / nd.
inline double objective_Q(const LowRankFactor& z, const LowRankFactor& z_prev,
                          const ObservedMatrix& m, const ThresholdVector& tau) {
  detail::check_shape(z, m, tau);
  const double nd = static_cast<double>(m.rows()) * static_cast<double>(m.cols());
  const CompositeMatrix filled(m, z_prev);
  return filled.distance_sq(z) / (2.0 * nd) + threshold_penalty(z, tau) / nd;
}

enum class BaselineVariant { softimpute, softimpute_rank, generalized, als, als_rank };

inline std::string to_string(BaselineVariant v) {
  switch (v) {
    case BaselineVariant::softimpute: return "softimpute";
    case BaselineVariant::softimpute_rank: return "softimpute-rank";
    case BaselineVariant::generalized: return "generalized";
    case BaselineVariant::als: return "als";
    case BaselineVariant::als_rank: return "als-rank";
  }
  return "?";
}

inline BaselineVariant parse_baseline_variant(const std::string& s) {
  if (s == "softimpute") return BaselineVariant::softimpute;
  if (s == "softimpute-rank") return BaselineVariant::softimpute_rank;
  if (s == "generalized") return BaselineVariant::generalized;
  if (s == "als") return BaselineVariant::als;
  if (s == "als-rank") return BaselineVariant::als_rank;
  throw UsageError("unknown baseline '" + s + "'");
}

struct BaselineSpec {
  BaselineVariant variant = BaselineVariant::softimpute;
  std::variant<double, ThresholdVector> tau = 0.0;
  std::optional<Index> rank_cap;

  bool rank_restricted() const {
    return variant == BaselineVariant::softimpute_rank || variant == BaselineVariant::als_rank;
  }

  /// Thresholds for a d-column working matrix; throws on inconsistent combinations.
  ThresholdVector thresholds(Index d) const {
    if (rank_restricted() && !rank_cap) {
      throw UsageError(to_string(variant) + " needs a rank cap");
    }
    if (!rank_restricted() && variant != BaselineVariant::generalized && rank_cap) {
      throw UsageError(to_string(variant) + " does not take a rank cap");
    }
    if (rank_cap && *rank_cap < 1) throw UsageError("rank cap must be positive");
    if (const auto* v = std::get_if<ThresholdVector>(&tau)) {
      if (variant != BaselineVariant::generalized) {
        throw UsageError(to_string(variant) + " takes a scalar threshold");
      }
      if (v->size() != d) {
        throw UsageError("threshold vector has " + std::to_string(v->size()) +
                         " values, expected " + std::to_string(d));
      }
      return *v;
    }
    const double t = std::get<double>(tau);
    if (!std::isfinite(t) || t < 0.0) throw UsageError("threshold must be finite and nonnegative");
    return ThresholdVector::constant(d, t);
  }
};

struct BaselineConfig {
  double epsilon = 1e-7;
  int max_iters = 500;
  std::uint64_t seed = 0;
  /// Pool-adjacent-violators projection of the shrunk values (exact proximal step for
  /// non-increasing thresholds); irrelevant for constant thresholds.
  bool isotonic = true;
  /// Working rank of the ALS factorization when no cap is given.
  Index als_rank = 50;
  /// Oracle tuning: start each grid point from the previous (larger-threshold) solution.
  bool warm_start = true;

  void validate() const {
    if (!(epsilon > 0.0)) throw UsageError("epsilon must be positive");
    if (max_iters < 1) throw UsageError("max_iters must be at least 1");
  }
};

/**
 * Generalized softImpute: Z_1 = 0 (unless a start is given), then
 * Z_{t+1} = thresholded SVD of P(M_p) + P_perp(Z_t). Working orientation
 * in and out; the report records f_tau and Q_tau at every step.
 */
inline Completion run_generalized_working(const ObservedMatrix& m, const ThresholdVector& tau,
                                          const BaselineConfig& cfg,
                                          std::optional<Index> rank_cap = {},
                                          std::optional<LowRankFactor> start = {}) {
  cfg.validate();
  if (tau.size() != m.cols()) {
    throw UsageError("threshold vector has " + std::to_string(tau.size()) + " values, expected " +
                     std::to_string(m.cols()));
  }
  const double nd = static_cast<double>(m.rows()) * static_cast<double>(m.cols());
  Completion out;
  out.report.method = "generalized";
  LowRankFactor z = start ? *start : LowRankFactor::zero(m.rows(), m.cols());
  if (z.rows() != m.rows() || z.cols() != m.cols()) {
    throw UsageError("start value does not match the observed matrix");
  }
  out.report.initial_objective = objective_f(z, m, tau);

  ThresholdOptions topts;
  topts.rank_cap = rank_cap;
  topts.isotonic = cfg.isotonic;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const CompositeMatrix filled(m, z);
    topts.rank_hint = z.rank();
    topts.svd.seed = derive_seed(cfg.seed, 2000, static_cast<std::uint64_t>(it));
    ThresholdStep step = threshold_operator(filled, tau, topts);

    IterationRecord rec;
    rec.iteration = it;
    rec.delta_sq = distance_sq(step.factor, z);
    rec.rel_change = relative_change(rec.delta_sq, z.frobenius_sq());
    rec.fit = observed_residual_sq(step.factor, m) / (2.0 * nd);
    rec.penalty = threshold_penalty(step.factor, tau) / nd;
    rec.objective = rec.fit + rec.penalty;
    rec.surrogate = filled.distance_sq(step.factor) / (2.0 * nd) + rec.penalty;
    rec.rank = step.factor.rank();
    rec.svd_steps = step.svd_steps;
    out.report.iterations.push_back(std::move(rec));
    out.report.iterations_used = it;

    z = std::move(step.factor);
    if (out.report.iterations.back().rel_change <= cfg.epsilon) {
      out.report.converged = true;
      break;
    }
  }
  out.factor = std::move(z);
  return out;
}

/// Generalized softImpute in the caller's orientation.
inline Completion run_generalized(const ObservedMatrix& m, const ThresholdVector& tau,
                                  const BaselineConfig& cfg = {},
                                  std::optional<Index> rank_cap = {}) {
  Completion c = run_generalized_working(m, tau, cfg, rank_cap);
  c.factor = to_original(c.factor, m);
  return c;
}

namespace detail {

/// P_Omega(M_p - A B^T) on the observed pattern.
inline Eigen::SparseMatrix<double> als_residual(const ObservedMatrix& m, const Eigen::MatrixXd& a,
                                                const Eigen::MatrixXd& b) {
  Eigen::SparseMatrix<double> r = m.sparse();
  double* vals = r.valuePtr();
  const auto entries = m.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    vals[k] = entries[k].value - a.row(entries[k].row).dot(b.row(entries[k].col));
  }
  return r;
}

/// X (G + tau I)^{-1} for symmetric G, robust to singular G when tau = 0.
inline Eigen::MatrixXd ridge_right_solve(const Eigen::MatrixXd& x, const Eigen::MatrixXd& g,
                                         double tau) {
  Eigen::MatrixXd lhs = g;
  lhs.diagonal().array() += tau;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(lhs);
  return cod.solve(x.transpose()).transpose();
}

}  // namespace detail

/**
 * softImpute-ALS: alternating ridge updates of Z = A B^T on the filled-in
 * matrix, minimizing (1/2)||P(M_p - A B^T)||^2 + (tau/2)(||A||^2 + ||B||^2).
 */
inline Completion run_als_working(const ObservedMatrix& m, double tau, Index rank,
                                  const BaselineConfig& cfg) {
  cfg.validate();
  if (rank < 1) throw UsageError("ALS rank must be positive");
  const Index n = m.rows(), d = m.cols();
  const Index k = std::min(rank, d);
  const double nd = static_cast<double>(n) * static_cast<double>(d);
  const ThresholdVector tv = ThresholdVector::constant(d, tau);

  Rng rng(derive_seed(cfg.seed, 3000));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(n, k);
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < n; ++i) a(i, j) = normal(rng);
  {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    a = qr.householderQ() * Eigen::MatrixXd::Identity(n, k);
  }
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(d, k);

  Completion out;
  out.report.method = "als";
  LowRankFactor z = LowRankFactor::zero(n, d);
  out.report.initial_objective = objective_f(z, m, tv);
  for (int it = 1; it <= cfg.max_iters; ++it) {
    // B <- M~^T A (A^T A + tau I)^{-1}, with M~^T A = B (A^T A) + R^T A
    Eigen::MatrixXd ata = a.transpose() * a;
    Eigen::SparseMatrix<double> r = detail::als_residual(m, a, b);
    b = detail::ridge_right_solve(b * ata + r.transpose() * a, ata, tau);
    // A <- M~ B (B^T B + tau I)^{-1}
    Eigen::MatrixXd btb = b.transpose() * b;
    r = detail::als_residual(m, a, b);
    a = detail::ridge_right_solve(a * btb + r * b, btb, tau);

    LowRankFactor next = factor_from_product(a, b).without_zeros();
    IterationRecord rec;
    rec.iteration = it;
    rec.delta_sq = distance_sq(next, z);
    rec.rel_change = relative_change(rec.delta_sq, z.frobenius_sq());
    rec.fit = observed_residual_sq(next, m) / (2.0 * nd);
    rec.penalty = threshold_penalty(next, tv) / nd;
    rec.objective = rec.fit + rec.penalty;
    rec.rank = next.rank();
    out.report.iterations.push_back(std::move(rec));
    out.report.iterations_used = it;
    z = std::move(next);
    if (out.report.iterations.back().rel_change <= cfg.epsilon) {
      out.report.converged = true;
      break;
    }
  }
  out.factor = std::move(z);
  return out;
}

/// Any baseline variant, in the caller's orientation. `start` (caller's
/// orientation) replaces Z_1 = 0 for the thresholded-SVD variants.
inline Completion run_baseline(const ObservedMatrix& m, const BaselineSpec& spec,
                               const BaselineConfig& cfg = {},
                               const std::optional<LowRankFactor>& start = {}) {
  const ThresholdVector tau = spec.thresholds(m.cols());
  std::optional<LowRankFactor> z1;
  if (start) z1 = to_working(*start, m);
  Completion c;
  switch (spec.variant) {
    case BaselineVariant::softimpute:
    case BaselineVariant::generalized:
      c = run_generalized_working(m, tau, cfg, spec.rank_cap, z1);
      break;
    case BaselineVariant::softimpute_rank:
      c = run_generalized_working(m, tau, cfg,
                                  *spec.rank_cap >= m.cols() ? std::nullopt : spec.rank_cap, z1);
      break;
    case BaselineVariant::als:
      c = run_als_working(m, tau(0), std::min(cfg.als_rank, m.cols()), cfg);
      break;
    case BaselineVariant::als_rank:
      c = run_als_working(m, tau(0), *spec.rank_cap, cfg);
      break;
  }
  c.report.method = to_string(spec.variant);
  c.factor = to_original(c.factor, m);
  return c;
}

/// `count` log-spaced thresholds over [lo, hi] * sigma_1(P(M_p)), largest first.
inline std::vector<double> default_tau_grid(const ObservedMatrix& m, int count = 20,
                                            double lo = 1e-3, double hi = 1.0,
                                            std::uint64_t seed = 0) {
  if (count < 1) throw UsageError("tau grid needs at least one point");
  if (!(lo > 0.0) || !(hi >= lo)) throw UsageError("tau grid needs 0 < lo <= hi");
  SvdOptions opts;
  opts.seed = seed;
  const double top = truncated_svd(SparseOperator(m.sparse()), 1, opts).factor.values()(0);
  std::vector<double> grid;
  for (int i = 0; i < count; ++i) {
    const double frac = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    grid.push_back(top * std::exp(std::log(hi) + frac * (std::log(lo) - std::log(hi))));
  }
  return grid;
}

struct OracleResult {
  std::size_t best_index = 0;
  double best_tau = 0.0;
  Completion best;
  std::vector<double> scores;
};

/// Scores a caller-orientation estimate; lower is better.
using Scorer = std::function<double(const LowRankFactor&)>;

/**
 * Runs the baseline at every grid threshold, in grid order, and keeps the one
 * with the lowest score (the first minimum wins ties). With `warm_start` each
 * thresholded-SVD run starts from the previous grid point's solution, so a
 * decreasing grid traces a regularization path; otherwise every run starts
 * from zero.
 */
inline OracleResult oracle_tune(const ObservedMatrix& m, const BaselineSpec& family,
                                const std::vector<double>& grid, const Scorer& score,
                                const BaselineConfig& cfg = {}) {
  if (grid.empty()) throw UsageError("oracle tuning: empty threshold grid");
  OracleResult out;
  out.scores.reserve(grid.size());
  double best = std::numeric_limits<double>::infinity();
  std::optional<LowRankFactor> previous;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    BaselineSpec spec = family;
    spec.tau = grid[g];
    Completion c = run_baseline(m, spec, cfg, cfg.warm_start ? previous : std::nullopt);
    if (cfg.warm_start) previous = c.factor;
    const double s = score(c.factor);
    out.scores.push_back(s);
    if (s < best || g == 0) {
      best = s;
      out.best_index = g;
      out.best_tau = grid[g];
      out.best = std::move(c);
    }
  }
  return out;
}

/// Oracle tuning against the total error ||Z - M||^2 / ||M||^2.
inline OracleResult oracle_tune(const Eigen::MatrixXd& truth, const ObservedMatrix& m,
                                const BaselineSpec& family, const std::vector<double>& grid,
                                const BaselineConfig& cfg = {}) {
  if (truth.rows() != m.original_rows() || truth.cols() != m.original_cols()) {
    throw UsageError("oracle tuning: truth does not match the observed matrix");
  }
  const double denom = truth.squaredNorm();
  if (!(denom > 0.0)) throw DataError("oracle tuning: ground truth is zero");
  return oracle_tune(
      m, family, grid,
      [&](const LowRankFactor& z) { return (z.dense() - truth).squaredNorm() / denom; }, cfg);
}

}  // namespace adaptimpute
