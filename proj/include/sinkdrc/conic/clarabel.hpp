// Adapter for the Clarabel interior-point solver (linked via its C ABI).
//
// Clarabel stores PSD slacks as the scaled *upper* triangle in column-major
// order while the IR uses the scaled lower triangle, so rows of PSD blocks are
// permuted on the way in and back out.
#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include <clarabel_capi.h>

#include "sinkdrc/conic/backend.hpp"

namespace sinkdrc::conic {

class ClarabelBackend final : public Backend {
 public:
  std::string name() const override { return "clarabel"; }
  bool supports_exponential() const override { return true; }

  Solution solve(const ConicProgram& p, const SolveOptions& opts) override {
    const int n = p.num_vars();
    const int m = p.num_rows();

    // Row permutation: ours -> clarabel (identity except inside PSD blocks).
    std::vector<int> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    for (const auto& c : p.cones()) {
      if (c.kind != ConeKind::PsdTriangle) continue;
      const int k = c.order;
      int r = c.first_row;
      for (int j = 0; j < k; ++j)
        for (int i = j; i < k; ++i, ++r)
          perm[r] = c.first_row + i * (i + 1) / 2 + j;  // upper svec slot (j,i)
    }

    // Build CSC.
    std::vector<Triplet> trip = p.triplets();
    for (auto& t : trip) t.row = perm[t.row];
    std::sort(trip.begin(), trip.end(), [](const Triplet& a, const Triplet& b) {
      return a.col != b.col ? a.col < b.col : a.row < b.row;
    });
    std::vector<uint64_t> colptr(n + 1, 0), rowval;
    std::vector<double> nzval;
    rowval.reserve(trip.size());
    nzval.reserve(trip.size());
    int prev_col = -1, prev_row = -1;
    for (const auto& t : trip) {
      if (t.col == prev_col && t.row == prev_row) {
        nzval.back() += t.value;  // merge duplicates
      } else {
        rowval.push_back(t.row);
        nzval.push_back(t.value);
        ++colptr[t.col + 1];
        prev_col = t.col;
        prev_row = t.row;
      }
    }
    for (int j = 0; j < n; ++j) colptr[j + 1] += colptr[j];

    std::vector<double> b(m);
    for (int r = 0; r < m; ++r) b[perm[r]] = p.rhs()[r];

    std::vector<double> c(n, 0.0);
    for (const auto& t : p.objective().terms()) c[t.var] += t.coeff;

    std::vector<int32_t> kinds;
    std::vector<uint64_t> dims;
    for (const auto& blk : p.cones()) {
      switch (blk.kind) {
        case ConeKind::Zero:
          kinds.push_back(CLARABEL_CONE_ZERO);
          dims.push_back(blk.rows);
          break;
        case ConeKind::NonNeg:
          kinds.push_back(CLARABEL_CONE_NONNEG);
          dims.push_back(blk.rows);
          break;
        case ConeKind::PsdTriangle:
          kinds.push_back(CLARABEL_CONE_PSD_TRIANGLE);
          dims.push_back(blk.order);
          break;
        case ConeKind::Exp:
          kinds.push_back(CLARABEL_CONE_EXP);
          dims.push_back(3);
          break;
      }
    }

    ClarabelOptions copts;
    copts.max_iter = opts.max_iter > 0 ? opts.max_iter : 500;
    copts.time_limit = opts.time_limit;
    copts.tol_gap_abs = opts.tol;
    copts.tol_gap_rel = opts.tol;
    copts.tol_feas = opts.tol;
    copts.verbose = opts.verbose ? 1 : 0;

    Solution sol;
    sol.x.resize(n);
    Vector s_perm(m), z_perm(m);
    ClarabelResult res{};
    const int rc = clarabel_solve(
        n, m, c.data(), colptr.data(), rowval.data(), nzval.data(), nzval.size(),
        b.data(), kinds.size(), kinds.data(), dims.data(), &copts, sol.x.data(),
        s_perm.data(), z_perm.data(), &res);
    if (rc != 0) throw SolverError("clarabel rejected the program (code " +
                                   std::to_string(rc) + ")");

    sol.s.resize(m);
    sol.z.resize(m);
    for (int r = 0; r < m; ++r) {
      sol.s[r] = s_perm[perm[r]];
      sol.z[r] = z_perm[perm[r]];
    }

    auto& rep = sol.report;
    rep.backend = name();
    rep.objective = res.obj_val + p.objective().constant();
    rep.primal_residual = res.r_prim;
    rep.dual_residual = res.r_dual;
    rep.iterations = static_cast<int>(res.iterations);
    rep.wall_time = res.solve_time;
    switch (res.status) {
      case CLARABEL_STATUS_OPTIMAL: rep.status = SolveStatus::Optimal; break;
      case CLARABEL_STATUS_INACCURATE: rep.status = SolveStatus::Inaccurate; break;
      case CLARABEL_STATUS_PRIMAL_INFEASIBLE: rep.status = SolveStatus::Infeasible; break;
      case CLARABEL_STATUS_DUAL_INFEASIBLE: rep.status = SolveStatus::Unbounded; break;
      case CLARABEL_STATUS_MAX_ITER:
        rep.status = SolveStatus::Inaccurate;
        rep.message = "iteration or time limit reached";
        break;
      default:
        rep.status = SolveStatus::Failed;
        rep.message = "clarabel status code " + std::to_string(res.status);
    }
    return sol;
  }
};

}  // namespace sinkdrc::conic
