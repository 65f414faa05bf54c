#pragma once

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "adaptimpute/adaptimpute.hpp"

namespace testing_support {

using adaptimpute::Entry;
using adaptimpute::Index;
using adaptimpute::ObservedMatrix;

inline Eigen::MatrixXd gaussian(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) a(i, j) = g(rng);
  return a;
}

inline Eigen::MatrixXd orthonormal(Index rows, Index cols, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(rows, cols, rng));
  return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
}

/// Bernoulli(p) mask with at least one observed cell.
inline Eigen::MatrixXd random_mask(Index rows, Index cols, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  Eigen::MatrixXd mask(rows, cols);
  do {
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) mask(i, j) = b(rng) ? 1.0 : 0.0;
  } while (mask.sum() == 0.0);
  return mask;
}

inline ObservedMatrix observe(const Eigen::MatrixXd& values, const Eigen::MatrixXd& mask) {
  std::vector<Entry> entries;
  for (Index j = 0; j < values.cols(); ++j)
    for (Index i = 0; i < values.rows(); ++i)
      if (mask(i, j) != 0.0) entries.push_back({i, j, values(i, j)});
  return ObservedMatrix(values.rows(), values.cols(), std::move(entries));
}

inline ObservedMatrix observe_all(const Eigen::MatrixXd& values) {
  return observe(values, Eigen::MatrixXd::Ones(values.rows(), values.cols()));
}

/// Random factor of the given rank in a rows x cols space.
inline adaptimpute::LowRankFactor random_factor(Index rows, Index cols, Index rank,
                                                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 5.0);
  Eigen::VectorXd s(rank);
  for (Index i = 0; i < rank; ++i) s(i) = u(rng);
  return adaptimpute::LowRankFactor(orthonormal(rows, rank, rng), s, orthonormal(cols, rank, rng));
}

/// Singular values of a dense matrix, descending.
inline Eigen::VectorXd singular_values(const Eigen::MatrixXd& a) {
  return Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues();
}

}  // namespace testing_support
