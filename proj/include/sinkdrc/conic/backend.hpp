// Backend adapter contract for conic solvers.
#pragma once

#include <memory>
#include <string>

#include "sinkdrc/conic/program.hpp"

namespace sinkdrc::conic {

enum class SolveStatus { Optimal, Infeasible, Unbounded, Inaccurate, Failed };

inline const char* status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::Inaccurate: return "inaccurate";
    case SolveStatus::Failed: return "failed";
  }
  return "?";
}

struct SolverReport {
  SolveStatus status = SolveStatus::Failed;
  double objective = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  double wall_time = 0.0;  // seconds
  std::string backend;
  std::string message;

  bool ok() const {
    return status == SolveStatus::Optimal || status == SolveStatus::Inaccurate;
  }
};

struct Solution {
  SolverReport report;
  Vector x;  // primal variables
  Vector s;  // cone slacks
  Vector z;  // dual variables
};

struct SolveOptions {
  int max_iter = 0;        // 0 = backend default
  double time_limit = 0.0; // seconds, 0 = unlimited
  double tol = 1e-8;
  bool verbose = false;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  virtual bool supports_exponential() const = 0;
  virtual Solution solve(const ConicProgram& p, const SolveOptions& opts) = 0;
};

// Solves and throws SolverError when the program is malformed or the backend
// cannot make progress; infeasible/unbounded pass through in the report.
inline Solution solve(const ConicProgram& p, Backend& backend,
                      const SolveOptions& opts = {}) {
  auto diag = p.validate();
  if (!diag.errors.empty())
    throw ValidationError("conic program invalid: " + diag.errors.front());
  bool needs_exp = false;
  for (const auto& c : p.cones())
    if (c.kind == ConeKind::Exp) needs_exp = true;
  if (needs_exp && !backend.supports_exponential())
    throw SolverError("backend '" + backend.name() +
                      "' lacks exponential cone support (required for eps > 0)");
  return backend.solve(p, opts);
}

}  // namespace sinkdrc::conic
