#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace kafisto {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised for malformed arguments or configuration (bad sizes, negative variances, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A non-finite loss, gradient or state entry was produced. Carries the
/// iteration at which it was detected so a run can report it as an outcome.
class NumericalDivergence : public std::runtime_error {
 public:
  NumericalDivergence(std::uint64_t iteration, const std::string& what)
      : std::runtime_error("diverged at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}

  std::uint64_t iteration() const noexcept { return iteration_; }

 private:
  std::uint64_t iteration_;
};

/// Broken algebraic invariant (e.g. the 2x2 posterior lost positive semidefiniteness).
class InternalConsistency : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline bool all_finite(const Vector& v) { return v.array().isFinite().all(); }

/// One minibatch observation of the objective.
struct ObjectiveEvaluation {
  double loss = 0.0;           // mean over the minibatch
  Vector per_sample_losses;    // one entry per batch index
  Vector gradient;             // gradient of `loss`
};

}  // namespace kafisto
