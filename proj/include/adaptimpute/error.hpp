#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace adaptimpute {

/// Malformed or inconsistent input data (bad indices, duplicates, empty Ω).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument combination supplied by the caller.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical routine failed to reach its tolerance.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Truncated SVD hit its iteration cap. Carries the residuals reached so far.
class SvdNotConverged : public NumericalError {
 public:
  SvdNotConverged(const std::string& what, std::vector<double> residuals, long steps)
      : NumericalError(what), residuals_(std::move(residuals)), steps_(steps) {}

  const std::vector<double>& residuals() const noexcept { return residuals_; }
  long steps() const noexcept { return steps_; }

 private:
  std::vector<double> residuals_;
  long steps_;
};

}  // namespace adaptimpute
