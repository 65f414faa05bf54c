#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptimpute/error.hpp"
#include "adaptimpute/initializer.hpp"
#include "adaptimpute/low_rank.hpp"
#include "adaptimpute/observed_matrix.hpp"
#include "adaptimpute/operators.hpp"
#include "adaptimpute/report.hpp"
#include "adaptimpute/rng.hpp"
#include "adaptimpute/truncated_svd.hpp"

namespace adaptimpute {

struct AdaptiveConfig {
  Index rank = 1;
  /// Stop when ||Z_{t+1} - Z_t||^2 / ||Z_t||^2 <= epsilon.
  double epsilon = 1e-7;
  int max_iters = 500;
  ClipBounds clip;
  /// Clip the filled-in entries of M~_t inside the loop (otherwise clip predictions only).
  bool clip_feedback = true;
  std::uint64_t seed = 0;
  /// Record the residual-change statistic each iteration (materializes n x d matrices).
  bool diagnostics = false;
  std::optional<SignMethod> sign_method;

  void validate(Index d) const {
    if (!(epsilon > 0.0)) throw UsageError("epsilon must be positive");
    if (max_iters < 1) throw UsageError("max_iters must be at least 1");
    if (rank < 1 || rank >= d) {
      throw UsageError("rank must satisfy 1 <= r < d (r = " + std::to_string(rank) +
                       ", d = " + std::to_string(d) + ")");
    }
  }
};

struct AdaptiveThresholds {
  double alpha_tilde = 0.0;
  Eigen::VectorXd tau;
  Eigen::VectorXd lambda;
  std::vector<bool> clamped;
};

/**
 * alpha~_t = mean trailing squared singular value of M~_t,
 * lambda_i = sqrt(max(0, sv_i^2 - alpha~_t)), tau_i = sv_i - lambda_i.
 */
inline AdaptiveThresholds adaptive_thresholds(std::span<const double> top_values, double frob_sq,
                                              Index d, Index r) {
  AdaptiveThresholds out;
  out.alpha_tilde = trailing_mean_sq(frob_sq, top_values, d, r);
  out.tau.resize(r);
  out.lambda.resize(r);
  out.clamped.assign(static_cast<std::size_t>(r), false);
  for (Index i = 0; i < r; ++i) {
    const double sv = top_values[static_cast<std::size_t>(i)];
    double radicand = sv * sv - out.alpha_tilde;
    if (radicand < 0.0) {
      radicand = 0.0;
      out.clamped[static_cast<std::size_t>(i)] = true;
    }
    out.lambda(i) = std::sqrt(radicand);
    out.tau(i) = sv - out.lambda(i);
  }
  return out;
}

/// Iterate Z_t together with what produced it. Working orientation.
struct IterationState {
  int t = 1;
  LowRankFactor z;
  double alpha_tilde = std::numeric_limits<double>::quiet_NaN();
  /// Thresholds of the step that produced Z_t (empty at t = 1).
  Eigen::VectorXd tau;
  /// Top-r singular values of M~_{t-1}.
  Eigen::VectorXd lambda_bar;
  double rel_change = std::numeric_limits<double>::quiet_NaN();
  double delta_sq = std::numeric_limits<double>::quiet_NaN();
  /// Q(Z_t | Z_{t-1}) with the step's thresholds.
  double surrogate = std::numeric_limits<double>::quiet_NaN();
  int clamped = 0;
  Index svd_steps = 0;
};

namespace detail {

inline ClipBounds fill_bounds(const AdaptiveConfig& cfg) {
  return cfg.clip_feedback ? cfg.clip : ClipBounds{};
}

inline double nd(const ObservedMatrix& m) {
  return static_cast<double>(m.rows()) * static_cast<double>(m.cols());
}

}  // namespace detail

/// One AdaptiveImpute step given a prebuilt M~_t.
inline IterationState iterate_once(const IterationState& state, const CompositeMatrix& filled,
                                   const ObservedMatrix& m, const AdaptiveConfig& cfg) {
  const Index r = cfg.rank;
  SvdOptions opts;
  opts.seed = derive_seed(cfg.seed, 1000, static_cast<std::uint64_t>(state.t));
  const SvdResult svd = truncated_svd(filled, r, opts);
  const Eigen::VectorXd& sv = svd.factor.values();
  const AdaptiveThresholds th =
      adaptive_thresholds(std::span<const double>(sv.data(), static_cast<std::size_t>(r)),
                          filled.frobenius_sq(), m.cols(), r);

  IterationState next;
  next.t = state.t + 1;
  next.z = LowRankFactor(svd.factor.u(), th.lambda, svd.factor.v());
  next.alpha_tilde = th.alpha_tilde;
  next.tau = th.tau;
  next.lambda_bar = sv;
  next.delta_sq = distance_sq(next.z, state.z);
  next.rel_change = relative_change(next.delta_sq, state.z.frobenius_sq());
  const double penalty = th.tau.dot(th.lambda) / detail::nd(m);
  next.surrogate = filled.distance_sq(next.z) / (2.0 * detail::nd(m)) + penalty;
  for (bool c : th.clamped) next.clamped += c ? 1 : 0;
  next.svd_steps = svd.steps;
  return next;
}

/// Z_{t+1} = sum_{i<=r} lambda_i^(t) u_i(M~_t) v_i(M~_t)^T.
inline IterationState iterate_once(const IterationState& state, const ObservedMatrix& m,
                                   const AdaptiveConfig& cfg) {
  const CompositeMatrix filled(m, state.z, detail::fill_bounds(cfg));
  return iterate_once(state, filled, m, cfg);
}

/**
 * Residual-change statistic
 * (||D_t - D_{t+1}||^2 + 2 <D_t - D_{t+1}, Z_{t+1} - Z_{t+2}>) / nd,
 * with D_t = M~_t - Z_{t+1}.
 */
inline double assumption2_statistic(const Eigen::MatrixXd& d_t, const Eigen::MatrixXd& d_next,
                                    const Eigen::MatrixXd& z_next, const Eigen::MatrixXd& z_next2) {
  if (d_t.rows() != d_next.rows() || d_t.cols() != d_next.cols() ||
      z_next.rows() != d_t.rows() || z_next.cols() != d_t.cols() ||
      z_next2.rows() != d_t.rows() || z_next2.cols() != d_t.cols()) {
    throw UsageError("assumption2_statistic: dimension mismatch");
  }
  const Eigen::MatrixXd dd = d_t - d_next;
  const double nd = static_cast<double>(d_t.rows()) * static_cast<double>(d_t.cols());
  return (dd.squaredNorm() + 2.0 * dd.cwiseProduct(z_next - z_next2).sum()) / nd;
}

/// The statistic for every consecutive triple of an iterate sequence Z_1, Z_2, ... (no clipping).
inline std::vector<double> assumption2_series(const ObservedMatrix& m,
                                              std::span<const LowRankFactor> iterates) {
  if (iterates.size() < 3) throw UsageError("assumption2_series: need at least 3 iterates");
  std::vector<Eigen::MatrixXd> d;
  for (std::size_t t = 0; t + 1 < iterates.size(); ++t) {
    const CompositeMatrix filled(m, iterates[t]);
    d.push_back(filled.dense() - iterates[t + 1].dense());
  }
  std::vector<double> out;
  for (std::size_t t = 0; t + 2 < iterates.size(); ++t) {
    out.push_back(assumption2_statistic(d[t], d[t + 1], iterates[t + 1].dense(),
                                        iterates[t + 2].dense()));
  }
  return out;
}

/// |tau_{t,i} - tau_{t+1,i}| / sqrt(nd).
inline Eigen::VectorXd threshold_drift(const Eigen::VectorXd& tau_t, const Eigen::VectorXd& tau_next,
                                       Index n, Index d) {
  if (tau_t.size() != tau_next.size()) throw UsageError("threshold_drift: length mismatch");
  return (tau_t - tau_next).cwiseAbs() / std::sqrt(static_cast<double>(n) * static_cast<double>(d));
}

struct AdaptiveRun {
  LowRankFactor factor;  ///< caller's orientation
  SolverReport report;
  InitializerResult initializer;
};

/// Initialize with the one-step estimate, then iterate adaptive thresholding until the
/// relative change drops to epsilon or max_iters is reached.
inline AdaptiveRun run_adaptive(const ObservedMatrix& m, const AdaptiveConfig& cfg) {
  cfg.validate(m.cols());
  AdaptiveRun run;
  run.initializer = initialize(m, cfg.rank, cfg.sign_method, derive_seed(cfg.seed, 1));
  run.report.method = "adaptive";

  IterationState state;
  state.t = 1;
  state.z = run.initializer.estimate;

  const double nd = detail::nd(m);
  std::optional<Eigen::MatrixXd> prev_d;
  std::optional<Eigen::MatrixXd> prev_z;  // Z_{t+1} of the previous step
  Eigen::VectorXd prev_tau;

  for (int it = 1; it <= cfg.max_iters; ++it) {
    const CompositeMatrix filled(m, state.z, detail::fill_bounds(cfg));
    IterationState next = iterate_once(state, filled, m, cfg);

    IterationRecord rec;
    rec.iteration = it;
    rec.rel_change = next.rel_change;
    rec.delta_sq = next.delta_sq;
    rec.fit = observed_residual_sq(next.z, m) / (2.0 * nd);
    rec.penalty = next.tau.dot(next.z.values()) / nd;
    rec.objective = rec.fit + rec.penalty;
    rec.surrogate = next.surrogate;
    rec.alpha_tilde = next.alpha_tilde;
    rec.rank = next.z.rank();
    rec.tau = next.tau;
    rec.clamped = next.clamped;
    rec.svd_steps = next.svd_steps;
    if (prev_tau.size() == next.tau.size()) {
      rec.drift = threshold_drift(prev_tau, next.tau, m.rows(), m.cols());
    }
    if (cfg.diagnostics) {
      Eigen::MatrixXd z_next = next.z.dense();
      Eigen::MatrixXd d_cur = filled.dense() - z_next;
      if (prev_d) rec.assumption2 = assumption2_statistic(*prev_d, d_cur, *prev_z, z_next);
      prev_d = std::move(d_cur);
      prev_z = std::move(z_next);
    }
    prev_tau = next.tau;
    run.report.iterations.push_back(std::move(rec));
    run.report.iterations_used = it;

    state = std::move(next);
    if (state.rel_change <= cfg.epsilon) {
      run.report.converged = true;
      break;
    }
  }
  run.factor = to_original(state.z, m);
  return run;
}

/// Prediction at (row, col) in the caller's orientation, clipped when bounds are set.
inline double predict(const LowRankFactor& z, Index row, Index col, const ClipBounds& clip = {}) {
  return clip(z(row, col));
}

}  // namespace adaptimpute
