#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "adaptimpute/low_rank.hpp"
#include "adaptimpute/matrix_io.hpp"

namespace adaptimpute {

/// One solver iteration t -> t + 1.
struct IterationRecord {
  int iteration = 0;
  /// ||Z_{t+1} - Z_t||_F^2 / ||Z_t||_F^2
  double rel_change = 0.0;
  /// ||Z_{t+1} - Z_t||_F^2
  double delta_sq = 0.0;
  /// (1/2nd) ||P(M_p - Z_{t+1})||_F^2
  double fit = 0.0;
  /// sum_i tau_i sigma_i(Z_{t+1}) / nd
  double penalty = 0.0;
  /// f_tau(Z_{t+1}) = fit + penalty
  double objective = 0.0;
  /// Q_tau(Z_{t+1} | Z_t)
  double surrogate = std::numeric_limits<double>::quiet_NaN();
  double alpha_tilde = std::numeric_limits<double>::quiet_NaN();
  Index rank = 0;
  /// Thresholds used in this step (adaptive solvers only).
  Eigen::VectorXd tau;
  /// |tau_{t,i} - tau_{t-1,i}| / sqrt(nd), from the second iteration on.
  Eigen::VectorXd drift;
  /// (1/nd)(||D_{t-1} - D_t||^2 + 2<D_{t-1} - D_t, Z_t - Z_{t+1}>); needs diagnostics.
  std::optional<double> assumption2;
  /// Components whose debiased value was clamped to zero.
  int clamped = 0;
  Index svd_steps = 0;
};

struct SolverReport {
  std::string method;
  std::vector<IterationRecord> iterations;
  bool converged = false;
  int iterations_used = 0;
  /// f_tau(Z_1) for fixed-threshold solvers (NaN otherwise).
  double initial_objective = std::numeric_limits<double>::quiet_NaN();
  /// Fraction of iterations where that residual-change statistic is nonnegative (diagnostics only).
  std::optional<double> assumption2_nonnegative_fraction() const {
    int count = 0, ok = 0;
    for (const auto& it : iterations) {
      if (!it.assumption2) continue;
      ++count;
      if (*it.assumption2 >= 0.0) ++ok;
    }
    if (count == 0) return std::nullopt;
    return static_cast<double>(ok) / count;
  }

  void write_csv(std::ostream& out) const {
    Index tau_cols = 0;
    for (const auto& it : iterations) tau_cols = std::max<Index>(tau_cols, it.tau.size());
    out << "iteration,rel_change,delta_sq,fit,penalty,objective,surrogate,alpha_tilde,rank,clamped,"
           "assumption2,svd_steps";
    for (Index i = 0; i < tau_cols; ++i) out << ",tau_" << (i + 1);
    for (Index i = 0; i < tau_cols; ++i) out << ",drift_" << (i + 1);
    out << '\n';
    auto num = [](double v) { return std::isnan(v) ? std::string() : io::format_double(v); };
    for (const auto& it : iterations) {
      out << it.iteration << ',' << num(it.rel_change) << ',' << num(it.delta_sq) << ','
          << num(it.fit) << ',' << num(it.penalty) << ',' << num(it.objective) << ','
          << num(it.surrogate) << ',' << num(it.alpha_tilde) << ',' << it.rank << ','
          << it.clamped << ',' << (it.assumption2 ? io::format_double(*it.assumption2) : "")
          << ',' << it.svd_steps;
      for (Index i = 0; i < tau_cols; ++i)
        out << ',' << (i < it.tau.size() ? io::format_double(it.tau(i)) : "");
      for (Index i = 0; i < tau_cols; ++i)
        out << ',' << (i < it.drift.size() ? io::format_double(it.drift(i)) : "");
      out << '\n';
    }
  }
};

/// Estimate in the caller's orientation plus the solver trace.
struct Completion {
  LowRankFactor factor;
  SolverReport report;
};

/// ||A - B||^2 / ||B||^2 with 0/0 := 0.
inline double relative_change(double delta_sq, double base_sq) {
  if (base_sq > 0.0) return delta_sq / base_sq;
  return delta_sq > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

}  // namespace adaptimpute
