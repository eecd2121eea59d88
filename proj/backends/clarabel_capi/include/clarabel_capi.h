// C interface for the Clarabel conic solver wrapper (see src/lib.rs).
#pragma once

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
  CLARABEL_CONE_ZERO = 0,
  CLARABEL_CONE_NONNEG = 1,
  CLARABEL_CONE_PSD_TRIANGLE = 2,
  CLARABEL_CONE_EXP = 3,
};

enum {
  CLARABEL_STATUS_OPTIMAL = 0,
  CLARABEL_STATUS_INACCURATE = 1,
  CLARABEL_STATUS_PRIMAL_INFEASIBLE = 2,
  CLARABEL_STATUS_DUAL_INFEASIBLE = 3,
  CLARABEL_STATUS_MAX_ITER = 4,
  CLARABEL_STATUS_FAILED = 5,
  CLARABEL_STATUS_BAD_INPUT = 6,
};

typedef struct {
  uint32_t max_iter;
  double time_limit;
  double tol_gap_abs;
  double tol_gap_rel;
  double tol_feas;
  int32_t verbose;
} ClarabelOptions;

typedef struct {
  int32_t status;
  double obj_val;
  double r_prim;
  double r_dual;
  uint32_t iterations;
  double solve_time;
} ClarabelResult;

// minimize c'x  s.t.  A x + s = b, s in K (cones in order). A is CSC.
// Returns 0 on success; nonzero indicates malformed input.
int clarabel_solve(size_t n, size_t m, const double* c, const uint64_t* a_colptr,
                   const uint64_t* a_rowval, const double* a_nzval, size_t a_nnz,
                   const double* b, size_t ncones, const int32_t* cone_kind,
                   const uint64_t* cone_dim, const ClarabelOptions* opts, double* x_out,
                   double* s_out, double* z_out, ClarabelResult* result);

#ifdef __cplusplus
}
#endif
