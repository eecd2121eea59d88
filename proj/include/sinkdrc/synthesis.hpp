// Controller synthesis over entropic-transport ambiguity sets: the convex
// program in its fixed-multiplier and one-shot conic forms, the Wasserstein
// and H2 specializations, and the feasibility certificate that swaps the
// epigraph matrix for the closed-loop quadratic.
#pragma once

#include <chrono>
#include <optional>

#include "sinkdrc/conic/solve.hpp"
#include "sinkdrc/duality.hpp"
#include "sinkdrc/system.hpp"

namespace sinkdrc {

struct MomentSpec {
  Vector mean;
  Matrix cov;

  static MomentSpec make(const Vector& mean, const Matrix& cov) {
    MomentSpec m{mean, symmetrize(cov)};
    if (cov.rows() != cov.cols() || cov.rows() != mean.size())
      throw ValidationError("moment dimensions disagree");
    Eigen::SelfAdjointEigenSolver<Matrix> es(m.cov);
    if (es.eigenvalues().minCoeff() < -1e-10 * (1.0 + es.eigenvalues().maxCoeff()))
      throw ValidationError("covariance must be positive semidefinite");
    return m;
  }
  static MomentSpec from_samples(const SampleSet& samples) {
    return make(samples.mean(), samples.covariance());
  }
  static MomentSpec from_reference(const GaussianReference& ref) {
    return make(ref.mean, ref.cov);
  }

  Matrix second_moment() const { return cov + mean * mean.transpose(); }
};

// tr(Phi' D Phi Sigma) + mu' Phi' D Phi mu
inline double evaluate_expected_cost(const ClosedLoopMap& map, const CostSpec& cost,
                                     const MomentSpec& moments) {
  const Matrix phi = map.stacked();
  if (phi.cols() != moments.mean.size())
    throw ValidationError("moment dimension does not match the map");
  const Matrix g = phi.transpose() * cost.D * phi;
  return (g * moments.cov).trace() + moments.mean.dot(g * moments.mean);
}

// ---------------------------------------------------------------------------
// Causal parametrization: the achievability equalities pin the state response
// once the input response is chosen, so the free decision variables are the
// causal entries of PhiU.

class CausalParametrization {
 public:
  CausalParametrization(const SystemSpec& spec, const StackedSystem& sys)
      : spec_(spec), sys_(sys) {
    for (int t = 0; t < spec.N; ++t)
      for (int j = 0; j <= t; ++j) {
        const int c0 = noise_block_offset(spec, j);
        const int w = noise_block_width(spec, j);
        for (int r = 0; r < spec.m; ++r)
          for (int c = 0; c < w; ++c)
            entries_.push_back({t * spec.m + r, c0 + c});
      }
  }

  int dim() const { return static_cast<int>(entries_.size()); }
  const std::vector<std::pair<int, int>>& entries() const { return entries_; }

  Matrix phi_u(const Vector& z) const {
    Matrix u = Matrix::Zero(spec_.N * spec_.m, spec_.s());
    for (int a = 0; a < dim(); ++a) u(entries_[a].first, entries_[a].second) = z[a];
    return u;
  }

  // PhiX from the dynamics recursion; exact achievability by construction.
  Matrix phi_x(const Matrix& phi_u) const {
    Matrix x = Matrix::Zero(spec_.N * spec_.d, spec_.s());
    x.block(0, 0, spec_.d, spec_.d).setIdentity();
    for (int t = 1; t < spec_.N; ++t) {
      x.middleRows(t * spec_.d, spec_.d) =
          spec_.A[t - 1] * x.middleRows((t - 1) * spec_.d, spec_.d) +
          spec_.B[t - 1] * phi_u.middleRows((t - 1) * spec_.m, spec_.m);
      x.block(t * spec_.d, noise_block_offset(spec_, t), spec_.d, spec_.p) +=
          spec_.E[t - 1];
    }
    return x;
  }

  ClosedLoopMap map(const Vector& z) const {
    ClosedLoopMap m;
    m.PhiU = phi_u(z);
    m.PhiX = phi_x(m.PhiU);
    return m;
  }

  // Adjoint of z -> (PhiX, PhiU): pulls gradients on the maps back to z.
  Vector adjoint(const Matrix& grad_x, const Matrix& grad_u) const {
    Matrix gu = grad_u;
    Matrix p = grad_x.bottomRows(spec_.d);  // running adjoint state
    for (int t = spec_.N - 2; t >= 0; --t) {
      gu.middleRows(t * spec_.m, spec_.m) += spec_.B[t].transpose() * p;
      p = grad_x.middleRows(t * spec_.d, spec_.d) + spec_.A[t].transpose() * p;
    }
    Vector g(dim());
    for (int a = 0; a < dim(); ++a)
      g[a] = gu(entries_[a].first, entries_[a].second);
    return g;
  }

  // Seed for warm starts: the H2-optimal response under the given moments.
  Vector h2_controls(const CostSpec& cost, const MomentSpec& moments) const {
    const int q = dim();
    const Matrix shalf = psd_sqrt(moments.second_moment());
    const Matrix base = cost.Dhalf * stack(map(Vector::Zero(q))) * shalf;
    Matrix l(base.size(), q);
    Vector z1 = Vector::Zero(q);
    for (int a = 0; a < q; ++a) {
      z1[a] = 1.0;
      const Matrix col = cost.Dhalf * stack(map(z1)) * shalf;
      l.col(a) = Eigen::Map<const Vector>(col.data(), col.size()) -
                 Eigen::Map<const Vector>(base.data(), base.size());
      z1[a] = 0.0;
    }
    Matrix h = l.transpose() * l;
    h.diagonal().array() += 1e-12 * (1.0 + h.trace());
    return Eigen::LDLT<Matrix>(h).solve(
        -l.transpose() * Eigen::Map<const Vector>(base.data(), base.size()));
  }

 private:
  static Matrix stack(const ClosedLoopMap& m) { return m.stacked(); }

  SystemSpec spec_;
  StackedSystem sys_;
  std::vector<std::pair<int, int>> entries_;
};

// ---------------------------------------------------------------------------

enum class Strategy { OuterLambdaSearch, DirectConic };

struct SynthesisTolerances {
  double lambda_rel_tol = 1e-9;
  double solver_tol = 1e-8;
  double achievability_tol = 1e-6;
  double feasibility_margin = 1e-9;
  bool skip_feasibility_check = false;
  int inner_max_iter = 4000;
};

struct SynthesisRequest {
  SystemSpec system;
  CostSpec cost;
  SampleSet samples;
  GaussianReference ref;
  AmbiguitySpec amb;
  Strategy strategy = Strategy::OuterLambdaSearch;
  std::string backend = "default";
  SynthesisTolerances tol;

  void validate() const {
    system.validate();
    amb.validate();
    const int s = system.s();
    if (ref.dim() != s)
      throw ValidationError("reference dimension does not match the stacked noise");
    samples.validate(s);
    if (cost.size() != system.N * (system.d + system.m))
      throw ValidationError("cost matrix size does not match the horizon");
  }
};

struct SolutionBundle {
  ClosedLoopMap map;
  double lambda_star = 0.0;
  double wc_cost = 0.0;
  Vector s_i;
  Vector zeta_i;
  Matrix Q_star;
  conic::SolverReport solver_report;
  double achievability = 0.0;  // residual of the returned map
  double rho_min = 0.0;
};

namespace detail {

// Fixed-multiplier objective over the free causal controls (the partial
// minimization of the convex program with Q eliminated at Phi' D Phi):
//   F(z) = lambda rho + (1/n) sum_i [ log terms + v_i' M^{-1} v_i
//          - lambda ||w_i||^2 - (lambda eps / 2) ||m||^2 ],
//   M(z) = lambda (I + eps/2 Sigma^{-1}) - Phi(z)' D Phi(z).
class FixedLambdaObjective {
 public:
  FixedLambdaObjective(const CausalParametrization& par, const CostSpec& cost,
                       const SampleSet& samples, const GaussianReference& ref,
                       double rho, double eps)
      : par_(par), cost_(cost), samples_(samples), ref_(ref), rho_(rho), eps_(eps) {
    const int s = ref.dim();
    T_ = Matrix::Identity(s, s) + 0.5 * eps * ref.cov_inv;
    tilt_ = 0.5 * eps * (ref.cov_inv * ref.mean);
    m_quad_ = ref.mean.dot(ref.cov_inv * ref.mean);
  }

  const Matrix& T() const { return T_; }

  void set_lambda(double lambda) { lambda_ = lambda; }

  double eval(const Vector& z, Vector* grad) const {
    const ClosedLoopMap map = par_.map(z);
    const Matrix phi = map.stacked();
    const Matrix dphi = cost_.D * phi;
    const Matrix g = phi.transpose() * dphi;
    const int s = static_cast<int>(g.rows());
    const Matrix M = lambda_ * T_ - g;
    Eigen::LLT<Matrix> llt(M);
    if (llt.info() != Eigen::Success)
      return std::numeric_limits<double>::infinity();

    const int n = samples_.count();
    double value = lambda_ * rho_;
    Matrix h = Matrix::Zero(s, s);
    if (eps_ > 0.0) {
      const double le = lambda_ * eps_;
      const double logdet_m =
          2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      value += 0.5 * le * s * std::log(0.5 * le) - 0.5 * le * ref_.logdet_cov -
               0.5 * le * logdet_m - 0.5 * le * m_quad_;
      h += 0.5 * le * llt.solve(Matrix::Identity(s, s));
    }
    for (int i = 0; i < n; ++i) {
      const Vector w = samples_.sample(i);
      const Vector v = lambda_ * (w + tilt_);  // tilt vanishes at eps = 0
      const Vector gi = llt.solve(v);
      value += (v.dot(gi) - lambda_ * w.squaredNorm()) / n;
      h += gi * gi.transpose() / n;
    }
    if (grad) {
      const Matrix grad_phi = 2.0 * dphi * h;
      const int nd = static_cast<int>(map.PhiX.rows());
      *grad = par_.adjoint(grad_phi.topRows(nd),
                           grad_phi.bottomRows(phi.rows() - nd));
    }
    return value;
  }

  // Per-sample epigraph values at the optimum (s_i and zeta_i).
  void epigraphs(const Vector& z, Vector& s_out, Vector& zeta_out) const {
    const Matrix phi = par_.map(z).stacked();
    const Matrix g = phi.transpose() * cost_.D * phi;
    const int s = static_cast<int>(g.rows());
    const Matrix M = lambda_ * T_ - g;
    Eigen::LLT<Matrix> llt(M);
    const int n = samples_.count();
    s_out.resize(n);
    zeta_out.resize(n);
    double log_terms = 0.0;
    if (eps_ > 0.0) {
      const double le = lambda_ * eps_;
      const double logdet_m =
          2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      log_terms = 0.5 * le * s * std::log(0.5 * le) - 0.5 * le * ref_.logdet_cov -
                  0.5 * le * logdet_m;
    }
    for (int i = 0; i < n; ++i) {
      const Vector w = samples_.sample(i);
      const Vector v = lambda_ * (w + tilt_);
      zeta_out[i] = v.dot(llt.solve(v)) - lambda_ * w.squaredNorm() -
                    0.5 * lambda_ * eps_ * m_quad_;
      s_out[i] = log_terms + zeta_out[i];
    }
  }

 private:
  const CausalParametrization& par_;
  const CostSpec& cost_;
  const SampleSet& samples_;
  const GaussianReference& ref_;
  double rho_, eps_;
  double lambda_ = 1.0;
  Matrix T_;
  Vector tilt_;
  double m_quad_ = 0.0;
};

// Limited-memory BFGS with backtracking line search; +inf marks points
// outside the barrier domain.
template <typename F>
double lbfgs_minimize(const F& f, Vector& z, int max_iter, double grad_tol) {
  const int mem = 12;
  std::vector<Vector> s_hist, y_hist;
  Vector grad(z.size());
  double fz = f(z, &grad);
  if (!std::isfinite(fz))
    throw ConvergenceError("smooth solve started outside the feasible domain", fz);
  Vector z_prev = z, g_prev = grad;
  for (int it = 0; it < max_iter; ++it) {
    if (grad.cwiseAbs().maxCoeff() <= grad_tol * (1.0 + std::abs(fz))) break;
    // two-loop recursion
    Vector q = grad;
    const int k = static_cast<int>(s_hist.size());
    std::vector<double> alpha(k);
    for (int i = k - 1; i >= 0; --i) {
      const double rho_i = 1.0 / y_hist[i].dot(s_hist[i]);
      alpha[i] = rho_i * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (k > 0) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < k; ++i) {
      const double rho_i = 1.0 / y_hist[i].dot(s_hist[i]);
      const double beta = rho_i * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Vector dir = -q;
    double slope = grad.dot(dir);
    if (slope >= 0.0) {  // fall back to steepest descent
      dir = -grad;
      slope = -grad.squaredNorm();
    }
    double step = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    Vector z_new, g_new(z.size());
    for (int ls = 0; ls < 60; ++ls) {
      z_new = z + step * dir;
      f_new = f(z_new, &g_new);
      if (std::isfinite(f_new) && f_new <= fz + 1e-4 * step * slope) break;
      step *= 0.5;
    }
    if (!std::isfinite(f_new) || f_new > fz) break;  // stalled
    Vector s_vec = z_new - z, y_vec = g_new - grad;
    if (s_vec.dot(y_vec) > 1e-14 * s_vec.norm() * y_vec.norm()) {
      s_hist.push_back(s_vec);
      y_hist.push_back(y_vec);
      if (static_cast<int>(s_hist.size()) > mem) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
      }
    }
    const double decrease = fz - f_new;
    z = z_new;
    grad = g_new;
    fz = f_new;
    if (decrease <= 1e-15 * (1.0 + std::abs(fz))) break;
  }
  return fz;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// H2 synthesis: least squares over the causal controls.

inline SolutionBundle synthesize_h2(const SystemSpec& system, const CostSpec& cost,
                                    const MomentSpec& moments) {
  system.validate();
  if (moments.mean.size() != system.s())
    throw ValidationError("moment dimension does not match the stacked noise");
  const auto sys = build_stacked(system);
  CausalParametrization par(system, sys);
  const auto t0 = std::chrono::steady_clock::now();
  const Vector z = par.h2_controls(cost, moments);
  SolutionBundle b;
  b.map = par.map(z);
  b.wc_cost = evaluate_expected_cost(b.map, cost, moments);
  b.lambda_star = 0.0;
  b.Q_star = b.map.stacked().transpose() * cost.D * b.map.stacked();
  b.achievability = achievability_residual(sys, b.map);
  b.solver_report.status = conic::SolveStatus::Optimal;
  b.solver_report.backend = "least-squares";
  b.solver_report.objective = b.wc_cost;
  b.solver_report.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return b;
}

// ---------------------------------------------------------------------------
// Conic assembly of the full program (fixed or variable multiplier).

struct ProgramHandles {
  int lambda = -1;  // variable index, -1 when fixed
  double fixed_lambda = 0.0;
  conic::SymVar Q;
  std::vector<int> s_vars, zeta_vars;
  Matrix phi_x_vars, phi_u_vars;  // var indices as doubles, -1 where zero

  double lambda_value(const Vector& x) const {
    return lambda >= 0 ? x[lambda] : fixed_lambda;
  }
  ClosedLoopMap map_value(const Vector& x) const {
    ClosedLoopMap m;
    auto fill = [&](const Matrix& vars) {
      Matrix out = Matrix::Zero(vars.rows(), vars.cols());
      for (int r = 0; r < vars.rows(); ++r)
        for (int c = 0; c < vars.cols(); ++c)
          if (vars(r, c) >= 0.0) out(r, c) = x[static_cast<int>(vars(r, c))];
      return out;
    };
    m.PhiX = fill(phi_x_vars);
    m.PhiU = fill(phi_u_vars);
    return m;
  }
};

inline std::pair<conic::ConicProgram, ProgramHandles> assemble_sinkhorn_program(
    const SynthesisRequest& req, std::optional<double> fixed_lambda = std::nullopt) {
  using namespace sinkdrc::conic;
  req.validate();
  const auto& spec = req.system;
  const int s = spec.s();
  const int n = req.samples.count();
  const int nd = spec.N * spec.d, nm = spec.N * spec.m, ndm = nd + nm;
  const double eps = req.amb.eps;
  const double rho = req.amb.rho;

  if (eps > 0.0 && !req.tol.skip_feasibility_check) {
    const double rho_min = feasibility_threshold(req.samples, req.ref, eps);
    if (rho < rho_min + req.tol.feasibility_margin)
      throw InfeasibleError("radius below the feasibility threshold", rho_min);
  }

  ConicProgram prog;
  ProgramHandles h;

  // Decision variables: causal map entries, epigraphs, Q, multiplier.
  const Matrix mask_x = causal_mask(spec, spec.d);
  const Matrix mask_u = causal_mask(spec, spec.m);
  h.phi_x_vars = Matrix::Constant(nd, s, -1.0);
  h.phi_u_vars = Matrix::Constant(nm, s, -1.0);
  {
    auto vars_for = [&](const Matrix& mask, Matrix& slots, const std::string& name) {
      int count = 0;
      for (int r = 0; r < mask.rows(); ++r)
        for (int c = 0; c < mask.cols(); ++c)
          if (mask(r, c) > 0.0) ++count;
      auto idx = prog.add_scalars(name, count);
      int k = 0;
      for (int r = 0; r < mask.rows(); ++r)
        for (int c = 0; c < mask.cols(); ++c)
          if (mask(r, c) > 0.0) slots(r, c) = idx[k++];
    };
    vars_for(mask_x, h.phi_x_vars, "PhiX");
    vars_for(mask_u, h.phi_u_vars, "PhiU");
  }
  auto phi_x = [&](int r, int c) {
    return h.phi_x_vars(r, c) >= 0.0
               ? LinExpr::variable(static_cast<int>(h.phi_x_vars(r, c)))
               : LinExpr(0.0);
  };
  auto phi_u = [&](int r, int c) {
    return h.phi_u_vars(r, c) >= 0.0
               ? LinExpr::variable(static_cast<int>(h.phi_u_vars(r, c)))
               : LinExpr(0.0);
  };

  h.Q = prog.add_symmetric("Q", s);
  h.s_vars = prog.add_scalars("s", n);
  h.zeta_vars = prog.add_scalars("zeta", n);
  LinExpr lambda_expr;
  if (fixed_lambda) {
    h.fixed_lambda = *fixed_lambda;
    if (*fixed_lambda <= 0.0)
      throw ValidationError("fixed multiplier must be positive");
    lambda_expr = LinExpr(*fixed_lambda);
  } else {
    h.lambda = prog.add_scalar("lambda");
    lambda_expr = LinExpr::variable(h.lambda);
    prog.add_nonneg(lambda_expr, "lambda >= 0");
  }

  // Achievability (block rows of the stacked equality) on the causal pattern.
  for (int t = 0; t < spec.N; ++t)
    for (int j = 0; j <= t; ++j) {
      const int c0 = noise_block_offset(spec, j);
      const int w = noise_block_width(spec, j);
      for (int r = 0; r < spec.d; ++r)
        for (int c = 0; c < w; ++c) {
          LinExpr e = phi_x(t * spec.d + r, c0 + c);
          if (t >= 1) {
            for (int k = 0; k < spec.d; ++k)
              e -= spec.A[t - 1](r, k) * phi_x((t - 1) * spec.d + k, c0 + c);
            for (int k = 0; k < spec.m; ++k)
              e -= spec.B[t - 1](r, k) * phi_u((t - 1) * spec.m + k, c0 + c);
          }
          double rhs = 0.0;
          if (t == 0 && j == 0)
            rhs = (r == c) ? 1.0 : 0.0;
          else if (j == t && t >= 1)
            rhs = spec.E[t - 1](r, c);
          prog.add_zero(e - rhs, "achievability");
        }
    }

  // M = lambda (I + eps/2 Sigma^{-1}) - Q  >=  delta(lambda) I.
  const Matrix T = Matrix::Identity(s, s) + 0.5 * eps * req.ref.cov_inv;
  ExprMatrix M(s, s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      M.at(i, j) = lambda_expr * T(i, j) - h.Q.entry(i, j);
  {
    ExprMatrix strict = M;
    for (int i = 0; i < s; ++i)
      strict.at(i, i) = strict.at(i, i) - (LinExpr(1e-9) + lambda_expr * 1e-9);
    prog.add_psd(strict, "M positive definite");
  }

  // Per-sample epigraph LMIs.
  const Vector tilt = 0.5 * eps * (req.ref.cov_inv * req.ref.mean);
  const double m_quad = req.ref.mean.dot(req.ref.cov_inv * req.ref.mean);
  for (int i = 0; i < n; ++i) {
    const Vector w = req.samples.sample(i);
    ExprMatrix lmi(s + 1, s + 1);
    for (int a = 0; a < s; ++a) {
      for (int b = 0; b < s; ++b) lmi.at(a, b) = M.at(a, b);
      const LinExpr off = lambda_expr * (w[a] + tilt[a]);
      lmi.at(a, s) = off;
      lmi.at(s, a) = off;
    }
    lmi.at(s, s) = LinExpr::variable(h.zeta_vars[i]) +
                   lambda_expr * (w.squaredNorm() + 0.5 * eps * m_quad);
    prog.add_psd(lmi, "sample epigraph " + std::to_string(i));
  }

  // Cost epigraph: [Q, (D^{1/2} Phi)'; D^{1/2} Phi, I] >= 0.
  {
    ExprMatrix schur(s + ndm, s + ndm);
    for (int a = 0; a < s; ++a)
      for (int b = 0; b < s; ++b) schur.at(a, b) = h.Q.entry(a, b);
    for (int r = 0; r < ndm; ++r)
      for (int c = 0; c < s; ++c) {
        LinExpr e;
        for (int k = 0; k < ndm; ++k) {
          const double coeff = req.cost.Dhalf(r, k);
          if (coeff == 0.0) continue;
          e += coeff * (k < nd ? phi_x(k, c) : phi_u(k - nd, c));
        }
        schur.at(s + r, c) = e;
        schur.at(c, s + r) = e;
      }
    for (int r = 0; r < ndm; ++r)
      for (int c = 0; c < ndm; ++c)
        schur.at(s + r, s + c) = LinExpr(r == c ? 1.0 : 0.0);
    prog.add_psd(schur, "cost epigraph");
  }

  // Log-det rows (only when the entropic term is active).
  if (eps > 0.0) {
    if (fixed_lambda) {
      const double le = *fixed_lambda * eps;
      LinExpr t = prog.add_logdet_hypograph(M, LinExpr(1.0), "logdet");
      const double log_terms =
          0.5 * le * s * std::log(0.5 * le) - 0.5 * le * req.ref.logdet_cov;
      for (int i = 0; i < n; ++i)
        prog.add_nonneg(LinExpr::variable(h.s_vars[i]) -
                            LinExpr::variable(h.zeta_vars[i]) + 0.5 * le * t -
                            log_terms,
                        "logdet epigraph " + std::to_string(i));
    } else {
      // Perspective form: u <= lambda log det(M / lambda).
      LinExpr u = prog.add_logdet_hypograph(M, lambda_expr, "logdet");
      const double lin_coeff =
          0.5 * eps * s * std::log(0.5 * eps) - 0.5 * eps * req.ref.logdet_cov;
      for (int i = 0; i < n; ++i)
        prog.add_nonneg(LinExpr::variable(h.s_vars[i]) -
                            LinExpr::variable(h.zeta_vars[i]) + 0.5 * eps * u -
                            lambda_expr * lin_coeff,
                        "logdet epigraph " + std::to_string(i));
    }
  } else {
    for (int i = 0; i < n; ++i)
      prog.add_nonneg(
          LinExpr::variable(h.s_vars[i]) - LinExpr::variable(h.zeta_vars[i]),
          "epigraph " + std::to_string(i));
  }

  // Objective: lambda rho + (1/n) sum s_i.
  LinExpr obj = lambda_expr * rho;
  for (int i = 0; i < n; ++i) obj += (1.0 / n) * LinExpr::variable(h.s_vars[i]);
  prog.set_objective(obj);
  return {std::move(prog), std::move(h)};
}

// ---------------------------------------------------------------------------
// Synthesis entry points.

namespace detail {

inline SolutionBundle synthesize_outer(const SynthesisRequest& req, double rho_min) {
  const auto& spec = req.system;
  const auto sys = build_stacked(spec);
  CausalParametrization par(spec, sys);
  const double eps = req.amb.eps;
  const auto t0 = std::chrono::steady_clock::now();

  FixedLambdaObjective obj(par, req.cost, req.samples, req.ref, req.amb.rho, eps);

  // Feasible multiplier from the H2 response under the reference moments.
  Vector z0 = par.h2_controls(req.cost, MomentSpec::from_reference(req.ref));
  const Matrix phi0 = par.map(z0).stacked();
  const Matrix g0 = phi0.transpose() * req.cost.D * phi0;
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(g0, obj.T());
  const double lambda_seed = std::max(ges.eigenvalues().maxCoeff(), 0.0);

  int inner_solves = 0;
  std::map<double, Vector> warm;  // lambda -> optimal controls
  auto value_at = [&](double lambda) {
    obj.set_lambda(lambda);
    // Controls feasible at some lambda' stay strictly feasible for every
    // larger multiplier (M grows with lambda), so prefer warm starts solved
    // at or below lambda, then nearby ones, then the seed.
    std::vector<Vector> starts;
    auto below = warm.upper_bound(lambda);
    if (below != warm.begin()) starts.push_back(std::prev(below)->second);
    if (below != warm.end()) starts.push_back(below->second);
    starts.push_back(z0);
    auto f = [&](const Vector& zz, Vector* grad) { return obj.eval(zz, grad); };
    for (Vector z : starts) {
      double v;
      try {
        v = detail::lbfgs_minimize(f, z, req.tol.inner_max_iter, 1e-12);
      } catch (const ConvergenceError&) {
        continue;  // start outside the barrier domain
      }
      ++inner_solves;
      warm[lambda] = z;
      return v;
    }
    return std::numeric_limits<double>::infinity();
  };

  double lo = lambda_seed * (1.0 + 1e-6) + 1e-12;
  double f_lo = value_at(lo);
  for (int grow = 0; !std::isfinite(f_lo) && grow < 60; ++grow) {
    lo = lambda_seed + (lo - lambda_seed) * 2.0;
    f_lo = value_at(lo);
  }
  if (!std::isfinite(f_lo))
    throw SolverError("could not find a feasible multiplier");

  // Probe below the seed: smaller multipliers may be admissible for other maps.
  for (int shrink = 0; shrink < 60; ++shrink) {
    const Matrix phis = par.map(warm[lo]).stacked();
    const Matrix gs = phis.transpose() * req.cost.D * phis;
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> glow(gs, obj.T());
    const double floor = std::max(glow.eigenvalues().maxCoeff(), 0.0);
    const double trial = std::max(floor * (1.0 + 1e-6) + 1e-12, lo * 0.5);
    if (trial >= lo * (1.0 - 1e-9)) break;
    const double f_trial = value_at(trial);
    if (!std::isfinite(f_trial) || f_trial >= f_lo) break;
    lo = trial;
    f_lo = f_trial;
  }

  // Bracket the minimum by doubling away from the seed bound.
  double hi = lo, f_prev = f_lo;
  bool bracketed = false;
  for (int it = 0; it < 80; ++it) {
    const double next = lo + (hi - lo + std::max(lo, 1e-8)) * 2.0;
    const double f_next = value_at(next);
    if (f_next >= f_prev) {
      hi = next;
      bracketed = true;
      break;
    }
    hi = next;
    f_prev = f_next;
  }
  if (!bracketed)
    throw ConvergenceError("outer search did not bracket a minimizer", f_prev);

  auto res = golden_section(value_at, lo, hi, req.tol.lambda_rel_tol);

  SolutionBundle b;
  b.lambda_star = res.x;
  b.wc_cost = res.value;
  obj.set_lambda(res.x);
  Vector z_star;
  if (auto it = warm.find(res.x); it != warm.end()) {
    z_star = it->second;
  } else {
    res.value = value_at(res.x);
    z_star = warm.at(res.x);
  }
  b.map = par.map(z_star);
  obj.epigraphs(z_star, b.s_i, b.zeta_i);
  b.Q_star = b.map.stacked().transpose() * req.cost.D * b.map.stacked();
  b.achievability = achievability_residual(sys, b.map);
  b.rho_min = rho_min;
  b.solver_report.status = conic::SolveStatus::Optimal;
  b.solver_report.backend = "outer-smooth";
  b.solver_report.objective = b.wc_cost;
  b.solver_report.iterations = inner_solves;
  b.solver_report.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return b;
}

inline SolutionBundle synthesize_direct(const SynthesisRequest& req, double rho_min) {
  auto [prog, handles] = assemble_sinkhorn_program(req);
  auto backend = conic::make_backend(req.backend);
  conic::SolveOptions opts;
  opts.tol = req.tol.solver_tol;
  auto sol = conic::solve(prog, *backend, opts);
  if (sol.report.status == conic::SolveStatus::Unbounded)
    throw InfeasibleError("program unbounded below: empty ambiguity set", rho_min);
  if (!sol.report.ok())
    throw SolverError("conic solve failed: " +
                      std::string(conic::status_name(sol.report.status)) +
                      (sol.report.message.empty() ? "" : " (" + sol.report.message + ")"));
  SolutionBundle b;
  b.map = handles.map_value(sol.x);
  b.lambda_star = handles.lambda_value(sol.x);
  b.wc_cost = sol.report.objective;
  const int n = req.samples.count();
  b.s_i.resize(n);
  b.zeta_i.resize(n);
  for (int i = 0; i < n; ++i) {
    b.s_i[i] = sol.x[handles.s_vars[i]];
    b.zeta_i[i] = sol.x[handles.zeta_vars[i]];
  }
  b.Q_star = handles.Q.value(sol.x);
  b.achievability = achievability_residual(build_stacked(req.system), b.map);
  b.rho_min = rho_min;
  b.solver_report = sol.report;
  return b;
}

}  // namespace detail

inline SolutionBundle synthesize_sinkhorn(const SynthesisRequest& req) {
  req.validate();
  const double eps = req.amb.eps;
  double rho_min = 0.0;
  if (eps > 0.0) {
    rho_min = feasibility_threshold(req.samples, req.ref, eps);
    if (!req.tol.skip_feasibility_check &&
        req.amb.rho < rho_min + req.tol.feasibility_margin)
      throw InfeasibleError("radius " + std::to_string(req.amb.rho) +
                                " is below the feasibility threshold " +
                                std::to_string(rho_min),
                            rho_min);
  }

  // Collapsed Wasserstein ball: empirical H2.
  if (eps == 0.0 && req.amb.rho == 0.0) {
    auto moments = MomentSpec::make(Vector::Zero(req.system.s()),
                                    req.samples.second_moment());
    SolutionBundle b = synthesize_h2(req.system, req.cost, moments);
    const int n = req.samples.count();
    b.s_i.resize(n);
    b.zeta_i.resize(n);
    const Matrix g = b.Q_star;
    for (int i = 0; i < n; ++i) {
      const Vector w = req.samples.sample(i);
      b.s_i[i] = b.zeta_i[i] = w.dot(g * w);
    }
    b.lambda_star = std::numeric_limits<double>::infinity();
    return b;
  }

  SolutionBundle b = req.strategy == Strategy::OuterLambdaSearch
                         ? detail::synthesize_outer(req, rho_min)
                         : detail::synthesize_direct(req, rho_min);
  if (b.achievability > req.tol.achievability_tol)
    throw SolverError("returned map violates achievability (residual " +
                      std::to_string(b.achievability) + ")");
  return b;
}

inline SolutionBundle synthesize_wasserstein(SynthesisRequest req) {
  req.amb.eps = 0.0;
  return synthesize_sinkhorn(req);
}

// ---------------------------------------------------------------------------
// Feasibility certificate from the equality-swap argument: replacing the
// epigraph matrix with Phi*' D Phi* must keep every constraint satisfied and
// leave the objective unchanged.

struct QSwapReport {
  bool pass = false;
  double worst_violation = 0.0;
  double objective_change = 0.0;
  std::string worst_constraint;
};

inline QSwapReport q_swap_certificate(const SolutionBundle& bundle,
                                      const SynthesisRequest& req,
                                      double tol = 1e-6) {
  req.validate();
  const double eps = req.amb.eps;
  const double lambda = bundle.lambda_star;
  const int s = req.system.s();
  const Matrix phi = bundle.map.stacked();
  const Matrix q_tilde = phi.transpose() * req.cost.D * phi;
  const Matrix T = Matrix::Identity(s, s) + 0.5 * eps * req.ref.cov_inv;
  const Matrix M = lambda * T - q_tilde;

  QSwapReport rep;
  auto track = [&](double violation, const std::string& name) {
    if (violation > rep.worst_violation) {
      rep.worst_violation = violation;
      rep.worst_constraint = name;
    }
  };

  // (11b): M > 0
  Eigen::SelfAdjointEigenSolver<Matrix> es(M);
  track(std::max(0.0, -es.eigenvalues().minCoeff()), "M positive definite");

  const Vector tilt = 0.5 * eps * (req.ref.cov_inv * req.ref.mean);
  const double m_quad = req.ref.mean.dot(req.ref.cov_inv * req.ref.mean);

  // (11c): log-det epigraph rows
  if (eps > 0.0) {
    double log_terms = std::numeric_limits<double>::infinity();
    if (es.eigenvalues().minCoeff() > 0.0) {
      const double le = lambda * eps;
      const double logdet_m = es.eigenvalues().array().log().sum();
      log_terms = 0.5 * le * s * std::log(0.5 * le) -
                  0.5 * le * req.ref.logdet_cov - 0.5 * le * logdet_m;
    }
    for (int i = 0; i < bundle.s_i.size(); ++i)
      track(std::max(0.0, log_terms + bundle.zeta_i[i] - bundle.s_i[i]),
            "logdet epigraph " + std::to_string(i));
  } else {
    for (int i = 0; i < bundle.s_i.size(); ++i)
      track(std::max(0.0, bundle.zeta_i[i] - bundle.s_i[i]),
            "epigraph " + std::to_string(i));
  }

  // (11d): per-sample LMIs with the swapped matrix
  for (int i = 0; i < req.samples.count(); ++i) {
    const Vector w = req.samples.sample(i);
    Matrix lmi(s + 1, s + 1);
    lmi.topLeftCorner(s, s) = M;
    lmi.block(0, s, s, 1) = lambda * (w + tilt);
    lmi.block(s, 0, 1, s) = (lambda * (w + tilt)).transpose();
    lmi(s, s) = bundle.zeta_i[i] + lambda * (w.squaredNorm() + 0.5 * eps * m_quad);
    Eigen::SelfAdjointEigenSolver<Matrix> les(lmi);
    track(std::max(0.0, -les.eigenvalues().minCoeff()),
          "sample epigraph " + std::to_string(i));
  }

  // (11e): holds with equality after the swap
  track(0.0, "cost epigraph");

  // Objective depends only on (lambda, s_i); the swap leaves it unchanged.
  const double objective =
      lambda * req.amb.rho + bundle.s_i.mean();
  rep.objective_change = std::abs(objective - bundle.wc_cost);

  rep.pass = rep.worst_violation <= tol && rep.objective_change <= tol;
  return rep;
}

}  // namespace sinkdrc
