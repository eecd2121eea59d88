// Worst-case expected quadratic loss over the entropic-transport ball via the
// strong dual: a closed-form Gaussian log-partition per sample and a convex
// one-dimensional search over the multiplier.
#pragma once

#include "sinkdrc/ambiguity.hpp"
#include "sinkdrc/numerics.hpp"

namespace sinkdrc {

// l(z) = z'Qz + 2 q'z
struct QuadraticLoss {
  Matrix Q;
  Vector q;

  static QuadraticLoss make(const Matrix& Q, const Vector& q) {
    QuadraticLoss l;
    l.Q = symmetrize(Q);
    l.q = q;
    if (Q.rows() != Q.cols() || Q.rows() != q.size())
      throw ValidationError("loss dimensions disagree");
    if ((Q - Q.transpose()).cwiseAbs().maxCoeff() >
        1e-10 * (1.0 + Q.cwiseAbs().maxCoeff()))
      throw ValidationError("loss matrix must be symmetric");
    return l;
  }
  static QuadraticLoss pure_quadratic(const Matrix& Q) {
    return make(Q, Vector::Zero(Q.rows()));
  }

  int dim() const { return static_cast<int>(q.size()); }
  double eval(const Vector& z) const { return z.dot(Q * z) + 2.0 * q.dot(z); }
};

// Smallest lambda with  lambda (I + eps/2 Sigma^{-1}) - Q > 0  (clipped at 0).
inline double lambda_lower_bound(const QuadraticLoss& loss,
                                 const GaussianReference& ref, double eps) {
  const int s = loss.dim();
  const Matrix T = Matrix::Identity(s, s) + 0.5 * eps * ref.cov_inv;
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(loss.Q, T);
  return std::max(0.0, ges.eigenvalues().maxCoeff());
}

// lambda*eps*log E_nu[exp((l(z) - lambda||w-z||^2)/(lambda eps))], closed form.
// Requires M = lambda (I + eps/2 Sigma^{-1}) - Q to be positive definite.
inline double log_partition(const QuadraticLoss& loss, double lambda,
                            const GaussianReference& ref, double eps,
                            const Vector& sample) {
  if (lambda <= 0.0 || eps <= 0.0)
    throw ValidationError("log_partition requires lambda > 0 and eps > 0");
  const int s = loss.dim();
  const Matrix M = lambda * (Matrix::Identity(s, s) + 0.5 * eps * ref.cov_inv) - loss.Q;
  Eigen::LLT<Matrix> llt(symmetrize(M));
  if (llt.info() != Eigen::Success)
    throw DivergentIntegralError(
        "Gaussian integral diverges: multiplier below the spectral bound");
  const double logdet_m =
      2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const Vector v =
      loss.q + lambda * (sample + 0.5 * eps * (ref.cov_inv * ref.mean));
  const double le = lambda * eps;
  return 0.5 * le * s * std::log(0.5 * le) - 0.5 * le * ref.logdet_cov -
         0.5 * le * logdet_m + v.dot(llt.solve(v)) - lambda * sample.squaredNorm() -
         0.5 * le * ref.mean.dot(ref.cov_inv * ref.mean);
}

// Wasserstein limit of the per-sample term (eps = 0): (q + lambda w)' (lambda I
// - Q)^{-1} (q + lambda w) - lambda ||w||^2.
inline double log_partition_wasserstein(const QuadraticLoss& loss, double lambda,
                                        const Vector& sample) {
  const int s = loss.dim();
  const Matrix M = lambda * Matrix::Identity(s, s) - loss.Q;
  Eigen::LLT<Matrix> llt(symmetrize(M));
  if (llt.info() != Eigen::Success)
    throw DivergentIntegralError("multiplier below the top eigenvalue of the loss");
  const Vector v = loss.q + lambda * sample;
  return v.dot(llt.solve(v)) - lambda * sample.squaredNorm();
}

// lambda*rho + (1/n) sum_i per-sample terms; eps = 0 uses the analytic
// Wasserstein limit instead of evaluating logarithms at zero.
inline double dual_objective(const QuadraticLoss& loss, double lambda,
                             const SampleSet& samples, const GaussianReference& ref,
                             double rho, double eps) {
  double acc = 0.0;
  for (int i = 0; i < samples.count(); ++i)
    acc += eps == 0.0 ? log_partition_wasserstein(loss, lambda, samples.sample(i))
                      : log_partition(loss, lambda, ref, eps, samples.sample(i));
  return lambda * rho + acc / samples.count();
}

struct DualEvaluation {
  double lambda_star = 0.0;
  double value = 0.0;
  Vector per_sample;                    // s_i terms at lambda*
  std::pair<double, double> bracket{0.0, 0.0};
  bool near_lower_bound = false;        // lambda* close to the spectral bound
};

struct WorstCaseOptions {
  double lambda_rel_tol = 1e-9;
  double bracket_cap = 1e15;          // growth factor cap relative to lambda0
  bool skip_feasibility_check = false;  // let the search detect emptiness itself
};

// Minimizes the dual objective over admissible multipliers. Throws
// InfeasibleError (carrying rho_min) when rho is below the feasibility
// threshold, and ConvergenceError when the objective keeps decreasing at the
// bracket cap (empty ambiguity set reached through skip_feasibility_check).
inline DualEvaluation worst_case_risk(const QuadraticLoss& loss,
                                      const SampleSet& samples,
                                      const GaussianReference& ref, double rho,
                                      double eps,
                                      const WorstCaseOptions& opts = {}) {
  if (rho < 0.0 || eps < 0.0)
    throw ValidationError("rho and eps must be nonnegative");
  samples.validate(loss.dim());

  if (eps > 0.0 && !opts.skip_feasibility_check) {
    const double rho_min = feasibility_threshold(samples, ref, eps);
    if (rho < rho_min * (1.0 - 1e-12) - 1e-15)
      throw InfeasibleError("radius " + std::to_string(rho) +
                                " is below the feasibility threshold " +
                                std::to_string(rho_min),
                            rho_min);
  }

  DualEvaluation out;
  // Collapsed ball: the Wasserstein set of radius zero is the empirical law.
  if (eps == 0.0 && rho == 0.0) {
    out.per_sample.resize(samples.count());
    for (int i = 0; i < samples.count(); ++i)
      out.per_sample[i] = loss.eval(samples.sample(i));
    out.value = out.per_sample.mean();
    out.lambda_star = std::numeric_limits<double>::infinity();
    return out;
  }

  const double lambda_lb = lambda_lower_bound(loss, ref, eps);
  auto g = [&](double lambda) {
    try {
      return dual_objective(loss, lambda, samples, ref, rho, eps);
    } catch (const DivergentIntegralError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  double lambda0 = lambda_lb > 0.0 ? lambda_lb * (1.0 + 1e-6)
                                   : 1e-12 * (1.0 + loss.Q.cwiseAbs().maxCoeff());
  double g0 = g(lambda0);
  for (int grow = 0; !std::isfinite(g0) && grow < 200; ++grow) {
    lambda0 = lambda_lb > 0.0 ? lambda_lb + (lambda0 - lambda_lb) * 2.0 : lambda0 * 2.0;
    g0 = g(lambda0);
  }
  if (!std::isfinite(g0))
    throw ConvergenceError("could not enter the dual domain above the spectral bound",
                           lambda0);

  // Bracket the minimum by doubling the distance to the spectral bound.
  double lo = lambda0, hi = lambda0, ghi = g0;
  double prev = g0;
  const double cap = lambda0 * opts.bracket_cap + opts.bracket_cap;
  while (true) {
    double next = lambda_lb + (hi - lambda_lb + lambda0) * 2.0;
    if (next > cap)
      throw ConvergenceError(
          "dual objective still decreasing at the bracket cap "
          "(ambiguity set empty or radius at the feasibility boundary)",
          prev);
    const double gnext = g(next);
    if (gnext >= prev) {
      hi = next;
      ghi = gnext;
      break;
    }
    lo = hi;
    hi = next;
    prev = gnext;
  }
  (void)ghi;

  auto res = golden_section(g, lo * (1.0 - 1e-12), hi, opts.lambda_rel_tol);
  out.lambda_star = res.x;
  out.value = res.value;
  out.bracket = {lo, hi};
  out.per_sample.resize(samples.count());
  for (int i = 0; i < samples.count(); ++i)
    out.per_sample[i] =
        eps == 0.0 ? log_partition_wasserstein(loss, res.x, samples.sample(i))
                   : log_partition(loss, res.x, ref, eps, samples.sample(i));
  out.near_lower_bound =
      lambda_lb > 0.0 && (res.x - lambda_lb) <= 1e-6 * std::max(1.0, lambda_lb);
  return out;
}

// ---------------------------------------------------------------------------
// Grid-discretized primal oracle (one-dimensional): maximizes the expected
// loss over distributions inside the discretized ball, a finite convex
// program solved through the conic backend. Lower-bounds the dual value and
// converges as the grid refines.

struct PrimalOracleOptions {
  int grid_points = 2001;
  double coverage_std = 8.0;    // reference std deviations covered by the grid
  double refine_gap_tol = 0.0;  // > 0: re-solve on half grid and compare
};

struct PrimalGrid {
  Vector points;
  Vector weights;  // discretized reference measure (normalized)

  DiscreteMeasure measure() const {
    DiscreteMeasure m;
    m.points = points;
    m.weights = weights;
    return m;
  }
};

inline PrimalGrid make_primal_grid(const SampleSet& samples,
                                   const GaussianReference& ref, int grid_points) {
  const double sd = std::sqrt(ref.cov(0, 0));
  double lo = ref.mean[0] - 8.0 * sd, hi = ref.mean[0] + 8.0 * sd;
  for (int i = 0; i < samples.count(); ++i) {
    lo = std::min(lo, samples.sample(i)[0] - 2.0 * sd);
    hi = std::max(hi, samples.sample(i)[0] + 2.0 * sd);
  }
  PrimalGrid grid;
  grid.points.resize(grid_points);
  grid.weights.resize(grid_points);
  for (int j = 0; j < grid_points; ++j) {
    const double y = lo + (hi - lo) * j / (grid_points - 1);
    grid.points[j] = y;
    const double r = (y - ref.mean[0]) / sd;
    grid.weights[j] = std::exp(-0.5 * r * r);
  }
  grid.weights /= grid.weights.sum();
  return grid;
}

namespace detail {

inline double primal_oracle_1d_solve(const QuadraticLoss& loss,
                                     const SampleSet& samples,
                                     const PrimalGrid& grid, double rho, double eps,
                                     conic::Backend& backend) {
  using namespace sinkdrc::conic;
  const int n = samples.count();
  const int k = static_cast<int>(grid.points.size());
  const double pw = 1.0 / n;

  ConicProgram prog;
  auto gvar = prog.add_scalars("gamma", n * k);
  auto at = [&](int i, int j) { return LinExpr::variable(gvar[i * k + j]); };
  LinExpr budget;  // transport + eps * KL  <= rho
  LinExpr objective;
  std::vector<int> tvar;
  if (eps > 0.0) tvar = prog.add_scalars("kl", n * k);
  for (int i = 0; i < n; ++i) {
    const double w = samples.sample(i)[0];
    for (int j = 0; j < k; ++j) {
      const double cij = (w - grid.points[j]) * (w - grid.points[j]);
      budget += cij * at(i, j);
      objective += loss.eval(Vector::Constant(1, grid.points[j])) * at(i, j);
      if (eps > 0.0) {
        const int id = i * k + j;
        prog.add_exp(-LinExpr::variable(tvar[id]), at(i, j),
                     LinExpr(pw * grid.weights[j]), "kl");
        budget += eps * LinExpr::variable(tvar[id]);
      } else {
        prog.add_nonneg(at(i, j), "gamma >= 0");
      }
    }
    LinExpr row(-pw);
    for (int j = 0; j < k; ++j) row += at(i, j);
    prog.add_zero(row, "center marginal");
  }
  prog.add_nonneg(LinExpr(rho) - budget, "ball budget");
  prog.set_objective(-objective);  // maximize

  auto sol = conic::solve(prog, backend);
  if (!sol.report.ok())
    throw SolverError("primal oracle solve failed: " +
                      std::string(status_name(sol.report.status)));
  return -sol.report.objective;
}

}  // namespace detail

inline double primal_oracle_1d(const QuadraticLoss& loss, const SampleSet& samples,
                               const GaussianReference& ref, double rho, double eps,
                               const PrimalOracleOptions& opts = {},
                               conic::Backend* backend = nullptr) {
  if (loss.dim() != 1 || ref.dim() != 1)
    throw ValidationError("primal oracle is one-dimensional");
  samples.validate(1);
  std::unique_ptr<conic::Backend> owned;
  if (!backend) {
    owned = conic::make_backend("default");
    backend = owned.get();
  }
  const auto grid = make_primal_grid(samples, ref, opts.grid_points);
  const double value =
      detail::primal_oracle_1d_solve(loss, samples, grid, rho, eps, *backend);
  if (opts.refine_gap_tol > 0.0) {
    const auto coarse = make_primal_grid(samples, ref, opts.grid_points / 2);
    const double coarse_value =
        detail::primal_oracle_1d_solve(loss, samples, coarse, rho, eps, *backend);
    if (std::abs(value - coarse_value) >
        opts.refine_gap_tol * std::max(1.0, std::abs(value)))
      throw ConvergenceError("primal grid too coarse for the requested tolerance",
                             std::abs(value - coarse_value));
  }
  return value;
}

}  // namespace sinkdrc
