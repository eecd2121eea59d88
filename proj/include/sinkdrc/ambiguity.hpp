// Gaussian reference measures, ambiguity-set feasibility, and the discrete
// optimal-transport / entropic-transport oracles used to verify ball nesting.
//
// Transport cost is fixed to the squared Euclidean distance throughout; the
// discrepancy regularizes the coupling against (center x reference).
#pragma once

#include <random>

#include "sinkdrc/conic/program.hpp"
#include "sinkdrc/conic/solve.hpp"
#include "sinkdrc/numerics.hpp"
#include "sinkdrc/system.hpp"

namespace sinkdrc {

// Reference measure nu = N(mean, cov) with cached factorizations.
struct GaussianReference {
  Vector mean;
  Matrix cov;
  Matrix chol;     // lower factor, cov = chol * chol'
  Matrix cov_inv;
  double logdet_cov = 0.0;

  static GaussianReference make(const Vector& mean, const Matrix& cov) {
    GaussianReference g;
    g.mean = mean;
    g.cov = symmetrize(cov);
    if (cov.rows() != cov.cols() || cov.rows() != mean.size())
      throw ValidationError("reference covariance/mean dimensions disagree");
    Eigen::LLT<Matrix> llt(g.cov);
    if (llt.info() != Eigen::Success)
      throw ValidationError("reference covariance must be positive definite");
    g.chol = llt.matrixL();
    g.cov_inv = llt.solve(Matrix::Identity(cov.rows(), cov.cols()));
    g.logdet_cov = 2.0 * g.chol.diagonal().array().log().sum();
    return g;
  }

  static GaussianReference isotropic(int dim, double variance, double mean_value = 0.0) {
    return make(Vector::Constant(dim, mean_value),
                variance * Matrix::Identity(dim, dim));
  }

  int dim() const { return static_cast<int>(mean.size()); }
};

// Ambiguity set parameters (radius, entropic regularization).
struct AmbiguitySpec {
  double rho = 0.0;
  double eps = 0.0;

  void validate() const {
    if (rho < 0.0 || eps < 0.0)
      throw ValidationError("ambiguity radius and regularization must be nonnegative");
  }
};

// ---------------------------------------------------------------------------
// Feasibility threshold (smallest radius with a nonempty ambiguity set).

// Closed form of the Gaussian log-partition expectation: the smallest rho for
// which the set is nonempty at this eps. Returns 0 exactly at eps = 0.
inline double feasibility_threshold(const SampleSet& samples,
                                    const GaussianReference& ref, double eps) {
  if (eps < 0.0) throw ValidationError("eps must be nonnegative");
  if (eps == 0.0) return 0.0;
  const int s = ref.dim();
  samples.validate(s);
  const Matrix T = Matrix::Identity(s, s) + 0.5 * eps * ref.cov_inv;
  Eigen::LLT<Matrix> lltT(T);
  const double logdet_shift =
      logdet_pd(ref.cov + 0.5 * eps * Matrix::Identity(s, s));
  const Vector tilt = 0.5 * eps * (ref.cov_inv * ref.mean);
  double quad = 0.0;
  for (int i = 0; i < samples.count(); ++i) {
    const Vector w = samples.sample(i);
    const Vector u = w + tilt;
    quad += w.squaredNorm() - u.dot(lltT.solve(u));
  }
  quad /= samples.count();
  return 0.5 * eps * logdet_shift - 0.5 * eps * s * std::log(0.5 * eps) +
         0.5 * eps * ref.mean.dot(ref.cov_inv * ref.mean) + quad;
}

// ---------------------------------------------------------------------------
// Independent oracle: -eps * E_{Phat}[ log E_nu exp(-||w - z||^2 / eps) ]
// evaluated by Gauss-Hermite quadrature (small dimension) or Monte-Carlo
// log-sum-exp, without reusing the closed form above.

struct OracleOptions {
  int mc_samples = 1000000;
  uint64_t seed = 715;
  int quadrature_nodes = 64;
  int max_quadrature_dim = 3;
  double target_tol = 1e-3;  // requested relative accuracy
};

struct OracleValue {
  double value = 0.0;
  double error_estimate = 0.0;  // standard-error style bound (MC only)
  bool tolerance_met = true;
  std::string method;
};

// Gauss-Hermite rule for weight exp(-x^2) via the Jacobi matrix.
inline void gauss_hermite(int n, Vector& nodes, Vector& weights) {
  Matrix J = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(0.5 * k);
  Eigen::SelfAdjointEigenSolver<Matrix> es(J);
  nodes = es.eigenvalues();
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    const double v0 = es.eigenvectors()(0, i);
    weights[i] = std::sqrt(M_PI) * v0 * v0;
  }
}

namespace detail {

// log E_{z~nu}[exp(g(z))] by tensorized Gauss-Hermite quadrature.
template <typename G>
double log_gaussian_expectation_quadrature(const GaussianReference& ref, int nodes,
                                           const G& g) {
  const int s = ref.dim();
  Vector x, w;
  gauss_hermite(nodes, x, w);
  w /= w.sum();  // normalized: plain average over the product rule
  std::vector<int> idx(s, 0);
  double vmax = -std::numeric_limits<double>::infinity();
  std::vector<double> vals;
  std::vector<double> logw;
  const long total = static_cast<long>(std::pow(static_cast<double>(nodes), s));
  vals.reserve(total);
  logw.reserve(total);
  Vector xi(s);
  for (long it = 0; it < total; ++it) {
    double lw = 0.0;
    for (int k = 0; k < s; ++k) {
      xi[k] = x[idx[k]];
      lw += std::log(w[idx[k]]);
    }
    const Vector z = ref.mean + std::sqrt(2.0) * (ref.chol * xi);
    const double v = g(z);
    vals.push_back(v + lw);
    vmax = std::max(vmax, v + lw);
    for (int k = s - 1; k >= 0; --k) {
      if (++idx[k] < nodes) break;
      idx[k] = 0;
    }
  }
  double acc = 0.0;
  for (double v : vals) acc += std::exp(v - vmax);
  return vmax + std::log(acc);
}

// log E_{z~nu}[exp(g(z))] by Monte-Carlo log-sum-exp; also reports a delta-
// method standard error of the log.
template <typename G>
double log_gaussian_expectation_mc(const GaussianReference& ref, int count,
                                   uint64_t seed, const G& g, double* log_se) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Vector xi(ref.dim());
  double vmax = -std::numeric_limits<double>::infinity();
  std::vector<double> vals(count);
  for (int i = 0; i < count; ++i) {
    for (int k = 0; k < xi.size(); ++k) xi[k] = n01(rng);
    vals[i] = g((ref.mean + ref.chol * xi).eval());
    vmax = std::max(vmax, vals[i]);
  }
  double acc = 0.0, acc2 = 0.0;
  for (double v : vals) {
    const double e = std::exp(v - vmax);
    acc += e;
    acc2 += e * e;
  }
  const double mean = acc / count;
  const double var = std::max(0.0, acc2 / count - mean * mean);
  if (log_se) *log_se = std::sqrt(var / count) / mean;  // SE of log-mean
  return vmax + std::log(mean);
}

}  // namespace detail

inline OracleValue feasibility_oracle(const SampleSet& samples,
                                      const GaussianReference& ref, double eps,
                                      const OracleOptions& opts = {}) {
  if (eps <= 0.0) throw ValidationError("feasibility oracle requires eps > 0");
  const int s = ref.dim();
  samples.validate(s);
  Eigen::SelfAdjointEigenSolver<Matrix> cov_eigs(ref.cov);
  // When the transport kernel exp(-c/eps) is narrower than nu, integrate the
  // nu-density against N(w, eps/2 I) instead (pure change of variables):
  //   E_nu[exp(-c/eps)] = (pi eps)^{s/2} E_{z ~ N(w, eps/2 I)}[dens_nu(z)].
  const bool tilt = 0.5 * eps < cov_eigs.eigenvalues().minCoeff();
  const double log_norm_nu =
      -0.5 * s * std::log(2.0 * M_PI) - 0.5 * ref.logdet_cov;

  OracleValue out;
  double worst_se = 0.0;
  double acc = 0.0;
  for (int i = 0; i < samples.count(); ++i) {
    const Vector w = samples.sample(i);
    GaussianReference base = ref;
    std::function<double(const Vector&)> g;
    double offset = 0.0;
    if (tilt) {
      base = GaussianReference::make(w, 0.5 * eps * Matrix::Identity(s, s));
      g = [&, w](const Vector& z) {
        const Vector r = z - ref.mean;
        return log_norm_nu - 0.5 * r.dot(ref.cov_inv * r);
      };
      offset = 0.5 * s * std::log(M_PI * eps);
    } else {
      g = [&, w](const Vector& z) { return -(w - z).squaredNorm() / eps; };
    }
    if (s <= opts.max_quadrature_dim) {
      acc += offset + detail::log_gaussian_expectation_quadrature(
                          base, opts.quadrature_nodes, g);
      out.method = "gauss-hermite";
    } else {
      double se = 0.0;
      acc += offset + detail::log_gaussian_expectation_mc(base, opts.mc_samples,
                                                          opts.seed + i, g, &se);
      worst_se = std::max(worst_se, se);
      out.method = "monte-carlo";
    }
  }
  out.value = -eps * acc / samples.count();
  out.error_estimate = eps * worst_se;
  out.tolerance_met =
      out.error_estimate <= opts.target_tol * std::max(1.0, std::abs(out.value));
  return out;
}

// ---------------------------------------------------------------------------
// Discrete measures, couplings, and transport oracles.

struct DiscreteMeasure {
  Matrix points;   // k x s
  Vector weights;  // k, nonnegative, sums to one

  static DiscreteMeasure dirac(const Vector& point) {
    DiscreteMeasure m;
    m.points = point.transpose();
    m.weights = Vector::Ones(1);
    return m;
  }
  static DiscreteMeasure uniform(const Matrix& points) {
    DiscreteMeasure m;
    m.points = points;
    m.weights = Vector::Constant(points.rows(), 1.0 / points.rows());
    return m;
  }

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }

  void validate() const {
    if (size() < 1) throw ValidationError("discrete measure has no atoms");
    if (weights.size() != size())
      throw ValidationError("weights do not match atom count");
    if (weights.minCoeff() < -1e-12)
      throw ValidationError("weights must be nonnegative");
    if (std::abs(weights.sum() - 1.0) > 1e-12)
      throw ValidationError("weights must sum to one");
  }
};

struct Coupling {
  Matrix plan;  // k1 x k2, nonnegative, row sums = first marginal, col sums = second

  double marginal_residual(const DiscreteMeasure& p, const DiscreteMeasure& q) const {
    const double r1 = (plan.rowwise().sum() - p.weights).cwiseAbs().maxCoeff();
    const double r2 =
        (plan.colwise().sum().transpose() - q.weights).cwiseAbs().maxCoeff();
    return std::max(r1, r2);
  }
};

inline Matrix pairwise_sq_dist(const Matrix& x, const Matrix& y) {
  Matrix c(x.rows(), y.rows());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < y.rows(); ++j)
      c(i, j) = (x.row(i) - y.row(j)).squaredNorm();
  return c;
}

struct TransportResult {
  double value = 0.0;
  Coupling coupling;
};

// Exact optimal transport for squared Euclidean cost: linear program over the
// coupling polytope, solved by the conic backend.
inline TransportResult discrete_ot(const DiscreteMeasure& p, const DiscreteMeasure& q,
                                   conic::Backend* backend = nullptr) {
  p.validate();
  q.validate();
  if (p.dim() != q.dim()) throw ValidationError("measures live in different spaces");
  const int k1 = p.size(), k2 = q.size();
  const Matrix c = pairwise_sq_dist(p.points, q.points);

  conic::ConicProgram prog;
  auto g = prog.add_scalars("gamma", k1 * k2);
  auto at = [&](int i, int j) { return conic::LinExpr::variable(g[i * k2 + j]); };
  conic::LinExpr obj;
  for (int i = 0; i < k1; ++i)
    for (int j = 0; j < k2; ++j) {
      prog.add_nonneg(at(i, j), "gamma >= 0");
      obj += c(i, j) * at(i, j);
    }
  prog.set_objective(obj);
  for (int i = 0; i < k1; ++i) {
    conic::LinExpr row(-p.weights[i]);
    for (int j = 0; j < k2; ++j) row += at(i, j);
    prog.add_zero(row, "row marginal");
  }
  for (int j = 0; j < k2; ++j) {
    conic::LinExpr col(-q.weights[j]);
    for (int i = 0; i < k1; ++i) col += at(i, j);
    prog.add_zero(col, "column marginal");
  }

  std::unique_ptr<conic::Backend> owned;
  if (!backend) {
    owned = conic::make_backend("default");
    backend = owned.get();
  }
  conic::SolveOptions lp_opts;
  lp_opts.tol = 1e-11;  // coupling marginals are asserted to 1e-9
  auto sol = conic::solve(prog, *backend, lp_opts);
  if (!sol.report.ok())
    throw SolverError("transport LP failed: " +
                      std::string(conic::status_name(sol.report.status)));
  TransportResult res;
  res.coupling.plan.resize(k1, k2);
  for (int i = 0; i < k1; ++i)
    for (int j = 0; j < k2; ++j)
      res.coupling.plan(i, j) = std::max(0.0, sol.x[g[i * k2 + j]]);
  res.value = (c.array() * res.coupling.plan.array()).sum();
  return res;
}

struct SinkhornOptions {
  double marginal_tol = 1e-10;
  int max_iter = 10000;
  double damping = 1.0;  // 1 = undamped Bregman projections
};

// Entropic transport value between p and q with reference nu on the second
// marginal: minimizes <C, gamma> + eps * KL(gamma | p x nu) over couplings.
// Every q-atom must coincide with a nu-atom of positive mass. eps = 0 falls
// back to the exact LP.
inline TransportResult discrete_sinkhorn(const DiscreteMeasure& p,
                                         const DiscreteMeasure& q,
                                         const DiscreteMeasure& nu, double eps,
                                         const SinkhornOptions& opts = {},
                                         conic::Backend* backend = nullptr) {
  if (eps < 0.0) throw ValidationError("eps must be nonnegative");
  if (eps == 0.0) return discrete_ot(p, q, backend);
  p.validate();
  q.validate();
  nu.validate();
  if (p.dim() != q.dim() || p.dim() != nu.dim())
    throw ValidationError("measures live in different spaces");

  const int k1 = p.size(), k2 = q.size();
  // Match q-atoms with nu-atoms (absolute continuity on the discrete support).
  Vector nu_at_q(k2);
  for (int j = 0; j < k2; ++j) {
    double mass = 0.0;
    bool found = false;
    for (int l = 0; l < nu.size(); ++l) {
      if ((q.points.row(j) - nu.points.row(l)).norm() <= 1e-12) {
        mass = nu.weights[l];
        found = true;
        break;
      }
    }
    if ((!found || mass <= 0.0) && q.weights[j] > 0.0)
      throw AbsoluteContinuityError(
          "second marginal puts mass outside the reference support (atom " +
          std::to_string(j) + ")");
    nu_at_q[j] = mass;
  }

  const Matrix c = pairwise_sq_dist(p.points, q.points);
  // Log-domain scaling on potentials f (rows) and g (cols):
  //   gamma_ij = p_i * nu_j * exp((f_i + g_j - C_ij) / eps).
  Vector f = Vector::Zero(k1), g = Vector::Zero(k2);
  Vector logp = p.weights.array().max(1e-300).log();
  Vector logq(k2), lognu(k2);
  for (int j = 0; j < k2; ++j) {
    logq[j] = q.weights[j] > 0.0 ? std::log(q.weights[j]) : -1e300;
    lognu[j] = nu_at_q[j] > 0.0 ? std::log(nu_at_q[j]) : -1e300;
  }

  double residual = std::numeric_limits<double>::infinity();
  int it = 0;
  auto lse_row = [&](int i) {  // log sum_j nu_j exp((g_j - C_ij)/eps)
    double vmax = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < k2; ++j)
      if (nu_at_q[j] > 0.0)
        vmax = std::max(vmax, (g[j] - c(i, j)) / eps + lognu[j]);
    double acc = 0.0;
    for (int j = 0; j < k2; ++j)
      if (nu_at_q[j] > 0.0)
        acc += std::exp((g[j] - c(i, j)) / eps + lognu[j] - vmax);
    return vmax + std::log(acc);
  };
  auto lse_col = [&](int j) {  // log sum_i p_i exp((f_i - C_ij)/eps)
    double vmax = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < k1; ++i)
      if (p.weights[i] > 0.0)
        vmax = std::max(vmax, (f[i] - c(i, j)) / eps + logp[i]);
    double acc = 0.0;
    for (int i = 0; i < k1; ++i)
      if (p.weights[i] > 0.0)
        acc += std::exp((f[i] - c(i, j)) / eps + logp[i] - vmax);
    return vmax + std::log(acc);
  };

  for (; it < opts.max_iter; ++it) {
    for (int i = 0; i < k1; ++i) {
      const double fnew = -eps * lse_row(i);
      f[i] = (1.0 - opts.damping) * f[i] + opts.damping * fnew;
    }
    for (int j = 0; j < k2; ++j) {
      if (q.weights[j] <= 0.0) {
        g[j] = -1e300;  // no mass allowed on this column
        continue;
      }
      const double gnew = eps * (logq[j] - lognu[j]) - eps * lse_col(j);
      g[j] = (1.0 - opts.damping) * g[j] + opts.damping * gnew;
    }
    // Column marginals hold after the g-update; check the rows.
    residual = 0.0;
    for (int i = 0; i < k1; ++i) {
      const double row_mass =
          p.weights[i] > 0.0 ? std::exp(f[i] / eps + lse_row(i)) * p.weights[i] : 0.0;
      residual = std::max(residual, std::abs(row_mass - p.weights[i]));
    }
    if (residual < opts.marginal_tol) break;
  }
  if (residual >= opts.marginal_tol)
    throw ConvergenceError("sinkhorn iterations did not reach the marginal tolerance",
                           residual);

  TransportResult res;
  res.coupling.plan = Matrix::Zero(k1, k2);
  double transport = 0.0, entropy = 0.0;
  for (int i = 0; i < k1; ++i) {
    if (p.weights[i] <= 0.0) continue;
    for (int j = 0; j < k2; ++j) {
      if (q.weights[j] <= 0.0 || nu_at_q[j] <= 0.0) continue;
      const double log_gamma =
          logp[i] + lognu[j] + (f[i] + g[j] - c(i, j)) / eps;
      const double gamma = std::exp(log_gamma);
      if (gamma <= 0.0) continue;
      res.coupling.plan(i, j) = gamma;
      transport += gamma * c(i, j);
      entropy += gamma * (log_gamma - logp[i] - lognu[j]);
    }
  }
  res.value = transport + eps * entropy;
  return res;
}

// ---------------------------------------------------------------------------
// Ball nesting report (set inclusions across the eps grid).

struct BallMembershipEntry {
  double eps = 0.0;
  double value = 0.0;
  bool member = false;
  bool boundary = false;  // |value - rho| within reporting tolerance
};

struct BallNestingReport {
  double rho = 0.0;
  double ot_value = 0.0;
  bool ot_member = false;
  std::vector<BallMembershipEntry> entries;  // sorted by eps
  bool membership_monotone = true;    // once excluded, never re-included
  bool sinkhorn_implies_ot = true;    // member at eps > 0 => member at eps = 0
};

inline BallNestingReport ball_nesting_check(const DiscreteMeasure& p,
                                            const DiscreteMeasure& q,
                                            const DiscreteMeasure& nu, double rho,
                                            std::vector<double> eps_grid,
                                            conic::Backend* backend = nullptr) {
  std::sort(eps_grid.begin(), eps_grid.end());
  BallNestingReport report;
  report.rho = rho;
  auto ot = discrete_ot(p, q, backend);
  report.ot_value = ot.value;
  report.ot_member = ot.value <= rho;
  bool excluded_seen = false;
  for (double eps : eps_grid) {
    BallMembershipEntry e;
    e.eps = eps;
    e.value = eps == 0.0 ? ot.value : discrete_sinkhorn(p, q, nu, eps).value;
    e.member = e.value <= rho;
    e.boundary = std::abs(e.value - rho) <= 1e-9 * std::max(1.0, std::abs(rho));
    if (excluded_seen && e.member) report.membership_monotone = false;
    if (!e.member) excluded_seen = true;
    if (e.member && !report.ot_member) report.sinkhorn_implies_ot = false;
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace sinkdrc
