// Reference first-order backend: over-relaxed ADMM on
//     minimize c'x + I_C(z)   s.t.  A x = z,    C = { z : b - z in K }.
//
// Supports zero, nonnegative and PSD cones; declares no exponential-cone
// support, so it only serves eps = 0 programs. Intended as an independent
// cross-check of the interior-point backend on small problems, not as the
// production path.
#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <chrono>

#include "sinkdrc/conic/backend.hpp"

namespace sinkdrc::conic {

class AdmmBackend final : public Backend {
 public:
  std::string name() const override { return "admm"; }
  bool supports_exponential() const override { return false; }

  Solution solve(const ConicProgram& p, const SolveOptions& opts) override {
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    const int n = p.num_vars();
    const int m = p.num_rows();
    for (const auto& c : p.cones())
      if (c.kind == ConeKind::Exp)
        throw SolverError("admm backend does not support exponential cones");

    Eigen::SparseMatrix<double> A(m, n);
    {
      std::vector<Eigen::Triplet<double>> ts;
      ts.reserve(p.triplets().size());
      for (const auto& t : p.triplets()) ts.emplace_back(t.row, t.col, t.value);
      A.setFromTriplets(ts.begin(), ts.end());
    }
    Vector b = Eigen::Map<const Vector>(p.rhs().data(), m);
    Vector c = Vector::Zero(n);
    for (const auto& t : p.objective().terms()) c[t.var] += t.coeff;

    const double sigma = 1.0;
    const double delta = 1e-6;
    const double alpha = 1.6;  // over-relaxation
    Eigen::SparseMatrix<double> K =
        (sigma * Eigen::SparseMatrix<double>(A.transpose() * A)).eval();
    for (int i = 0; i < n; ++i) K.coeffRef(i, i) += delta;
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(K);

    Solution sol;
    auto& rep = sol.report;
    rep.backend = name();
    if (llt.info() != Eigen::Success) {
      rep.status = SolveStatus::Failed;
      rep.message = "KKT factorization failed";
      return sol;
    }

    Vector x = Vector::Zero(n), z = Vector::Zero(m), u = Vector::Zero(m);
    const int max_iter = opts.max_iter > 0 ? opts.max_iter : 100000;
    const double tol = opts.tol;
    const double bscale = 1.0 + b.cwiseAbs().maxCoeff();
    const double cscale = 1.0 + c.cwiseAbs().maxCoeff();

    double rp = 0, rd = 0;
    int it = 0;
    for (; it < max_iter; ++it) {
      x = llt.solve(delta * x + sigma * (A.transpose() * (z - u)) - c);
      Vector ax = A * x;
      Vector v = alpha * ax + (1.0 - alpha) * z + u;
      z = b - project_cone(p, b - v);
      u += alpha * ax + (1.0 - alpha) * z - z;  // u += (relaxed Ax) - z

      if (it % 25 == 0 || it == max_iter - 1) {
        Vector y = sigma * u;
        rp = (ax - z).cwiseAbs().maxCoeff() / bscale;
        rd = (c + A.transpose() * y).cwiseAbs().maxCoeff() / cscale;
        if (rp < tol && rd < tol) break;
      }
    }

    sol.x = x;
    sol.z = sigma * u;
    sol.s = b - A * x;
    rep.objective = p.eval_objective(x);
    rep.primal_residual = rp;
    rep.dual_residual = rd;
    rep.iterations = it;
    rep.wall_time =
        std::chrono::duration<double>(Clock::now() - t0).count();
    rep.status = (rp < tol && rd < tol) ? SolveStatus::Optimal : SolveStatus::Inaccurate;
    if (rep.status == SolveStatus::Inaccurate)
      rep.message = "tolerance not reached (primal " + std::to_string(rp) +
                    ", dual " + std::to_string(rd) + ")";
    return sol;
  }

 private:
  // Projection of w onto K, blockwise.
  static Vector project_cone(const ConicProgram& p, Vector w) {
    for (const auto& cb : p.cones()) {
      auto seg = w.segment(cb.first_row, cb.rows);
      switch (cb.kind) {
        case ConeKind::Zero:
          seg.setZero();
          break;
        case ConeKind::NonNeg:
          seg = seg.cwiseMax(0.0);
          break;
        case ConeKind::PsdTriangle: {
          Matrix M = ConicProgram::unstack_svec(seg, cb.order);
          Eigen::SelfAdjointEigenSolver<Matrix> es(M);
          Matrix proj = es.eigenvectors() *
                        es.eigenvalues().cwiseMax(0.0).asDiagonal() *
                        es.eigenvectors().transpose();
          seg = ConicProgram::stack_svec(proj);
          break;
        }
        case ConeKind::Exp:
          break;  // rejected earlier
      }
    }
    return w;
  }
};

}  // namespace sinkdrc::conic
