// Shared scalar/matrix aliases and the error taxonomy used across the library.
#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace sinkdrc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed inputs (dimension mismatches, bad weights, invalid configs).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Requested radius below the feasibility threshold of the ambiguity set.
class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, double rho_min)
      : Error(what), rho_min(rho_min) {}
  double rho_min;
};

// Controller recovery requires a square, well-conditioned state response.
class UnsupportedRecoveryError : public Error {
 public:
  using Error::Error;
};

// Gaussian integral diverges: multiplier below the spectral bound.
class DivergentIntegralError : public Error {
 public:
  using Error::Error;
};

// Q-measure puts mass where the reference measure has none.
class AbsoluteContinuityError : public Error {
 public:
  using Error::Error;
};

// Iterative scheme failed to reach its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual(residual) {}
  double residual;
};

// Backend returned a non-optimal status that the caller cannot recover from.
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace sinkdrc
