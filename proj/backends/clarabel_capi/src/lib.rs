// C ABI for driving Clarabel from C/C++.
//
// Problem form:  minimize c'x  subject to  A x + s = b,  s in K,
// where K is a product of cones given in order. A is in CSC layout.
// PSD cones use Clarabel's scaled upper-triangular (svec) storage.

use clarabel::algebra::CscMatrix;
use clarabel::solver::*;

pub const CONE_ZERO: i32 = 0;
pub const CONE_NONNEG: i32 = 1;
pub const CONE_PSD_TRIANGLE: i32 = 2; // dim = matrix order k, occupies k(k+1)/2 rows
pub const CONE_EXP: i32 = 3; // occupies 3 rows

pub const STATUS_OPTIMAL: i32 = 0;
pub const STATUS_INACCURATE: i32 = 1;
pub const STATUS_PRIMAL_INFEASIBLE: i32 = 2;
pub const STATUS_DUAL_INFEASIBLE: i32 = 3;
pub const STATUS_MAX_ITER: i32 = 4;
pub const STATUS_FAILED: i32 = 5;
pub const STATUS_BAD_INPUT: i32 = 6;

#[repr(C)]
pub struct ClarabelOptions {
    pub max_iter: u32,
    pub time_limit: f64, // seconds, 0 = unlimited
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    pub verbose: i32,
}

#[repr(C)]
pub struct ClarabelResult {
    pub status: i32,
    pub obj_val: f64,
    pub r_prim: f64,
    pub r_dual: f64,
    pub iterations: u32,
    pub solve_time: f64,
}

/// Solves one conic program. Returns 0 on success (including infeasible
/// certificates), nonzero on malformed input. x/s/z buffers must hold n, m
/// and m doubles respectively.
///
/// # Safety
/// All pointers must reference buffers of the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn clarabel_solve(
    n: usize,
    m: usize,
    c: *const f64,
    a_colptr: *const u64,
    a_rowval: *const u64,
    a_nzval: *const f64,
    a_nnz: usize,
    b: *const f64,
    ncones: usize,
    cone_kind: *const i32,
    cone_dim: *const u64,
    opts: *const ClarabelOptions,
    x_out: *mut f64,
    s_out: *mut f64,
    z_out: *mut f64,
    result: *mut ClarabelResult,
) -> i32 {
    let c = std::slice::from_raw_parts(c, n).to_vec();
    let colptr: Vec<usize> = std::slice::from_raw_parts(a_colptr, n + 1)
        .iter()
        .map(|&v| v as usize)
        .collect();
    let rowval: Vec<usize> = std::slice::from_raw_parts(a_rowval, a_nnz)
        .iter()
        .map(|&v| v as usize)
        .collect();
    let nzval = std::slice::from_raw_parts(a_nzval, a_nnz).to_vec();
    let b = std::slice::from_raw_parts(b, m).to_vec();

    let mut cones: Vec<SupportedConeT<f64>> = Vec::with_capacity(ncones);
    let mut rows = 0usize;
    for i in 0..ncones {
        let d = *cone_dim.add(i) as usize;
        match *cone_kind.add(i) {
            CONE_ZERO => {
                cones.push(ZeroConeT(d));
                rows += d;
            }
            CONE_NONNEG => {
                cones.push(NonnegativeConeT(d));
                rows += d;
            }
            CONE_PSD_TRIANGLE => {
                cones.push(PSDTriangleConeT(d));
                rows += d * (d + 1) / 2;
            }
            CONE_EXP => {
                cones.push(ExponentialConeT());
                rows += 3;
            }
            _ => return 1,
        }
    }
    if rows != m {
        return 2;
    }

    let o = &*opts;
    let settings = DefaultSettings::<f64> {
        max_iter: o.max_iter,
        time_limit: if o.time_limit > 0.0 {
            o.time_limit
        } else {
            f64::INFINITY
        },
        verbose: o.verbose != 0,
        tol_gap_abs: o.tol_gap_abs,
        tol_gap_rel: o.tol_gap_rel,
        tol_feas: o.tol_feas,
        ..DefaultSettings::default()
    };

    let p = CscMatrix::<f64>::zeros((n, n));
    let a = CscMatrix::new(m, n, colptr, rowval, nzval);
    let mut solver = match DefaultSolver::new(&p, &c, &a, &b, &cones, settings) {
        Ok(s) => s,
        Err(_) => return 3,
    };
    solver.solve();

    let sol = &solver.solution;
    std::ptr::copy_nonoverlapping(sol.x.as_ptr(), x_out, n);
    std::ptr::copy_nonoverlapping(sol.s.as_ptr(), s_out, m);
    std::ptr::copy_nonoverlapping(sol.z.as_ptr(), z_out, m);

    let r = &mut *result;
    r.obj_val = sol.obj_val;
    r.r_prim = sol.r_prim;
    r.r_dual = sol.r_dual;
    r.iterations = sol.iterations;
    r.solve_time = sol.solve_time;
    r.status = match sol.status {
        SolverStatus::Solved => STATUS_OPTIMAL,
        SolverStatus::AlmostSolved => STATUS_INACCURATE,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            STATUS_PRIMAL_INFEASIBLE
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            STATUS_DUAL_INFEASIBLE
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime => STATUS_MAX_ITER,
        _ => STATUS_FAILED,
    };
    0
}
