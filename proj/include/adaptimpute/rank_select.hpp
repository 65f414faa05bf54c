#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "adaptimpute/error.hpp"
#include "adaptimpute/observed_matrix.hpp"
#include "adaptimpute/operators.hpp"
#include "adaptimpute/truncated_svd.hpp"

namespace adaptimpute {

struct ScreeResult {
  std::vector<double> singular_values;
  /// log s_i - log s_{i+1}
  std::vector<double> log_gaps;
  std::optional<Index> suggested_rank;
  /// Largest log-gap over the median log-gap.
  double confidence = 0.0;
  std::string warning;
};

/// Relative floor applied before taking logs, so exact zeros give a finite gap.
inline constexpr double kScreeFloor = 1e-12;
/// A gap must exceed this multiple of the median gap to count.
inline constexpr double kScreeGapRatio = 2.0;

inline ScreeResult scree_from_values(std::vector<double> values) {
  if (values.size() < 2) throw UsageError("scree: need at least two singular values");
  for (double v : values)
    if (!std::isfinite(v) || v < 0.0) throw UsageError("scree: singular values must be finite and >= 0");
  ScreeResult out;
  out.singular_values = std::move(values);
  const auto& s = out.singular_values;
  const double top = *std::max_element(s.begin(), s.end());
  if (top == 0.0) {
    out.log_gaps.assign(s.size() - 1, 0.0);
    out.warning = "all singular values are zero";
    return out;
  }
  const double floor = kScreeFloor * top;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    out.log_gaps.push_back(std::log(std::max(s[i], floor)) - std::log(std::max(s[i + 1], floor)));
  }
  std::vector<double> sorted = out.log_gaps;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t g = sorted.size();
  const double median = g % 2 == 1 ? sorted[g / 2] : 0.5 * (sorted[g / 2 - 1] + sorted[g / 2]);
  const auto it = std::max_element(out.log_gaps.begin(), out.log_gaps.end());
  const double largest = *it;
  if (median > 0.0) {
    out.confidence = largest / median;
  } else {
    out.confidence = largest > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  if (largest > kScreeGapRatio * median && largest > 0.0) {
    out.suggested_rank = static_cast<Index>(it - out.log_gaps.begin()) + 1;
  } else {
    out.warning = "no dominant singular value gap (largest log-gap is not above twice the median)";
  }
  return out;
}

/// Top-k singular values of P(M_p) and the gap-based rank suggestion.
inline ScreeResult scree(const ObservedMatrix& m, std::optional<Index> k = {},
                         std::uint64_t seed = 0) {
  const Index limit = std::min(m.rows(), m.cols());
  const Index count = k.value_or(std::min<Index>(50, m.cols()));
  if (count < 2 || count > limit) {
    throw UsageError("scree: k = " + std::to_string(count) + " outside [2, " +
                     std::to_string(limit) + "]");
  }
  SvdOptions opts;
  opts.seed = seed;
  const SvdResult svd = truncated_svd(SparseOperator(m.sparse()), count, opts);
  const Eigen::VectorXd& v = svd.factor.values();
  return scree_from_values(std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace adaptimpute
