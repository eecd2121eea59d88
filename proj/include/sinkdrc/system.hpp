// Finite-horizon LTV plants, their block-stacked operators, closed-loop
// response maps with causal sparsity, controller recovery and rollouts.
#pragma once

#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "sinkdrc/numerics.hpp"

namespace sinkdrc {

// x_{t+1} = A_t x_t + B_t u_t + E_t w_t over t = 0..N-2 (N states x_0..x_{N-1}).
struct SystemSpec {
  int N = 0;  // horizon length (number of stacked states)
  int d = 0, m = 0, p = 0;
  std::vector<Matrix> A, B, E;

  // Time-invariant shorthand: one (A, B, E) repeated N-1 times.
  static SystemSpec time_invariant(int N, const Matrix& A, const Matrix& B,
                                   const Matrix& E) {
    SystemSpec s;
    s.N = N;
    s.d = static_cast<int>(A.rows());
    s.m = static_cast<int>(B.cols());
    s.p = static_cast<int>(E.cols());
    s.A.assign(N - 1, A);
    s.B.assign(N - 1, B);
    s.E.assign(N - 1, E);
    s.validate();
    return s;
  }

  // Discrete-time mass-spring-damper benchmark (unit mass/stiffness/damping,
  // sampling time Ts), d = 2, m = 1, p = 2.
  static SystemSpec mass_spring(int N, double Ts = 1.0, double k = 1.0,
                                double c = 1.0, double mass = 1.0) {
    Matrix A(2, 2), B(2, 1);
    A << 1.0, Ts, -k * Ts / mass, 1.0 - c * Ts / mass;
    B << 0.0, Ts / mass;
    return time_invariant(N, A, B, Matrix::Identity(2, 2));
  }

  // Disturbance-vector dimension of the stacked noise (x_0, w_0..w_{N-2}).
  int s() const { return d + (N - 1) * p; }

  void validate() const {
    if (N < 2) throw ValidationError("horizon N must be at least 2");
    if (d < 1 || m < 1 || p < 1)
      throw ValidationError("state/input/disturbance dimensions must be positive");
    auto check = [&](const std::vector<Matrix>& mats, int rows, int cols,
                     const char* name) {
      if (static_cast<int>(mats.size()) != N - 1)
        throw ValidationError(std::string(name) + ": expected " +
                              std::to_string(N - 1) + " matrices, got " +
                              std::to_string(mats.size()));
      for (int t = 0; t < N - 1; ++t)
        if (mats[t].rows() != rows || mats[t].cols() != cols)
          throw ValidationError(std::string(name) + "[" + std::to_string(t) +
                                "] has wrong shape");
    };
    check(A, d, d, "A");
    check(B, d, m, "B");
    check(E, d, p, "E");
  }
};

// Block-stacked operators of the compact dynamics x = Z A x + Z B u + E w.
struct StackedSystem {
  int N = 0, d = 0, m = 0, p = 0, s = 0;
  Matrix Z;     // Nd x Nd block downshift
  Matrix bigA;  // Nd x Nd blkdiag(A_0..A_{N-2}, 0)
  Matrix bigB;  // Nd x Nm blkdiag(B_0..B_{N-2}, 0)
  Matrix bigE;  // Nd x s  blkdiag(I_d, E_0..E_{N-2})
};

inline StackedSystem build_stacked(const SystemSpec& spec) {
  spec.validate();
  StackedSystem st;
  st.N = spec.N;
  st.d = spec.d;
  st.m = spec.m;
  st.p = spec.p;
  st.s = spec.s();
  const int nd = spec.N * spec.d;
  st.Z = Matrix::Zero(nd, nd);
  st.bigA = Matrix::Zero(nd, nd);
  st.bigB = Matrix::Zero(nd, spec.N * spec.m);
  st.bigE = Matrix::Zero(nd, st.s);
  for (int t = 0; t < spec.N - 1; ++t) {
    st.Z.block((t + 1) * spec.d, t * spec.d, spec.d, spec.d).setIdentity();
    st.bigA.block(t * spec.d, t * spec.d, spec.d, spec.d) = spec.A[t];
    st.bigB.block(t * spec.d, t * spec.m, spec.d, spec.m) = spec.B[t];
    st.bigE.block((t + 1) * spec.d, spec.d + t * spec.p, spec.d, spec.p) = spec.E[t];
  }
  st.bigE.topLeftCorner(spec.d, spec.d).setIdentity();
  return st;
}

// Quadratic stage weight over the stacked [x; u], cached symmetric PSD root.
struct CostSpec {
  Matrix D;
  Matrix Dhalf;

  static CostSpec from_matrix(const Matrix& D) {
    if (D.rows() != D.cols()) throw ValidationError("cost matrix must be square");
    if ((D - D.transpose()).cwiseAbs().maxCoeff() >
        1e-10 * (1.0 + D.cwiseAbs().maxCoeff()))
      throw ValidationError("cost matrix must be symmetric");
    CostSpec c;
    c.D = symmetrize(D);
    c.Dhalf = psd_sqrt(c.D);
    return c;
  }

  static CostSpec identity(const SystemSpec& spec) {
    return from_matrix(Matrix::Identity(spec.N * (spec.d + spec.m),
                                        spec.N * (spec.d + spec.m)));
  }

  // Uniform per-step weights: D = blkdiag(wx * I_{Nd}, wu * I_{Nm}).
  static CostSpec from_weights(const SystemSpec& spec, double state_weight,
                               double input_weight) {
    const int nd = spec.N * spec.d, nm = spec.N * spec.m;
    Vector diag(nd + nm);
    diag.head(nd).setConstant(state_weight);
    diag.tail(nm).setConstant(input_weight);
    return from_matrix(diag.asDiagonal());
  }

  int size() const { return static_cast<int>(D.rows()); }
};

// Closed-loop response pair (PhiX, PhiU), block lower-triangular in the
// (x_0, w_0..w_{N-2}) column blocks.
struct ClosedLoopMap {
  Matrix PhiX;  // Nd x s
  Matrix PhiU;  // Nm x s

  Matrix stacked() const {
    Matrix phi(PhiX.rows() + PhiU.rows(), PhiX.cols());
    phi << PhiX, PhiU;
    return phi;
  }
};

struct ControllerRealization {
  Matrix K;  // Nm x Nd, block lower-triangular
  bool ill_conditioned = false;
};

// Column offset/width of block j of the stacked disturbance (j=0 -> x_0).
inline int noise_block_offset(const SystemSpec& spec, int j) {
  return j == 0 ? 0 : spec.d + (j - 1) * spec.p;
}
inline int noise_block_width(const SystemSpec& spec, int j) {
  return j == 0 ? spec.d : spec.p;
}

// Causality masks: row block t may depend on column blocks j <= t.
inline Matrix causal_mask(const SystemSpec& spec, int block_rows) {
  Matrix mask = Matrix::Zero(static_cast<Eigen::Index>(spec.N) * block_rows, spec.s());
  for (int t = 0; t < spec.N; ++t)
    for (int j = 0; j <= t; ++j)
      mask.block(t * block_rows, noise_block_offset(spec, j), block_rows,
                 noise_block_width(spec, j))
          .setOnes();
  return mask;
}

inline double causality_violation(const SystemSpec& spec, const ClosedLoopMap& map) {
  const Matrix mx = causal_mask(spec, spec.d);
  const Matrix mu = causal_mask(spec, spec.m);
  double v = (map.PhiX.array() * (1.0 - mx.array())).abs().maxCoeff();
  v = std::max(v, (map.PhiU.array() * (1.0 - mu.array())).abs().maxCoeff());
  return v;
}

// Frobenius norm of [I - Z A, -Z B] [PhiX; PhiU] - E.
inline double achievability_residual(const StackedSystem& sys,
                                     const ClosedLoopMap& map) {
  if (map.PhiX.rows() != sys.Z.rows() || map.PhiX.cols() != sys.s ||
      map.PhiU.rows() != sys.N * sys.m || map.PhiU.cols() != sys.s)
    throw ValidationError("closed-loop map dimensions do not match the system");
  const int nd = sys.N * sys.d;
  Matrix r = (Matrix::Identity(nd, nd) - sys.Z * sys.bigA) * map.PhiX -
             sys.Z * sys.bigB * map.PhiU - sys.bigE;
  return r.norm();
}

inline ClosedLoopMap closed_loop_from_controller(const SystemSpec& spec,
                                                 const StackedSystem& sys,
                                                 const ControllerRealization& ctrl) {
  const int nd = sys.N * sys.d;
  if (ctrl.K.rows() != sys.N * sys.m || ctrl.K.cols() != nd)
    throw ValidationError("controller dimensions do not match the system");
  // I - Z(A + BK) is block unitriangular, hence always invertible.
  Matrix resolvent = Matrix::Identity(nd, nd) - sys.Z * (sys.bigA + sys.bigB * ctrl.K);
  ClosedLoopMap map;
  map.PhiX = resolvent.partialPivLu().solve(sys.bigE);
  map.PhiU = ctrl.K * map.PhiX;
  // The maps are block lower-triangular by construction; pin the pattern to
  // exact zeros against LU roundoff.
  map.PhiX.array() *= causal_mask(spec, spec.d).array();
  map.PhiU.array() *= causal_mask(spec, spec.m).array();
  return map;
}

// K = PhiU * PhiX^{-1}; requires a square PhiX (p == d with invertible E_t).
// Entries outside the block lower-triangular pattern are verified small and
// zeroed so the causal sparsity holds exactly.
inline ControllerRealization recover_controller(const SystemSpec& spec,
                                                const ClosedLoopMap& map,
                                                double cond_threshold = 1e12) {
  if (map.PhiX.rows() != map.PhiX.cols())
    throw UnsupportedRecoveryError(
        "state response is not square (p != d); apply the policy through the map");
  Eigen::JacobiSVD<Matrix> svd(map.PhiX);
  const auto& sv = svd.singularValues();
  ControllerRealization ctrl;
  if (sv[sv.size() - 1] <= 0.0)
    throw UnsupportedRecoveryError("state response is singular");
  ctrl.ill_conditioned = sv[0] / sv[sv.size() - 1] > cond_threshold;
  ctrl.K = map.PhiX.transpose()
               .partialPivLu()
               .solve(map.PhiU.transpose())
               .transpose();
  const double scale = 1.0 + ctrl.K.cwiseAbs().maxCoeff();
  for (int t = 0; t < spec.N; ++t)
    for (int k = t + 1; k < spec.N; ++k) {
      auto blk = ctrl.K.block(t * spec.m, k * spec.d, spec.m, spec.d);
      if (blk.cwiseAbs().maxCoeff() > 1e-6 * scale)
        throw ValidationError("recovered controller is not causal");
      blk.setZero();
    }
  return ctrl;
}

struct RolloutResult {
  Vector x;  // Nd stacked state trajectory
  Vector u;  // Nm stacked input trajectory
  double cost = 0.0;
};

namespace detail {
inline RolloutResult simulate(const SystemSpec& spec, const CostSpec& cost,
                              const Vector& noise,
                              const std::function<Vector(int, const Vector&)>& input_at) {
  if (noise.size() != spec.s())
    throw ValidationError("noise vector has wrong length");
  RolloutResult r;
  r.x = Vector::Zero(spec.N * spec.d);
  r.u = Vector::Zero(spec.N * spec.m);
  r.x.head(spec.d) = noise.head(spec.d);
  for (int t = 0; t < spec.N; ++t) {
    const Vector xt = r.x.segment(t * spec.d, spec.d);
    const Vector ut = input_at(t, r.x);
    r.u.segment(t * spec.m, spec.m) = ut;
    if (t + 1 < spec.N) {
      const Vector wt = noise.segment(spec.d + t * spec.p, spec.p);
      r.x.segment((t + 1) * spec.d, spec.d) =
          spec.A[t] * xt + spec.B[t] * ut + spec.E[t] * wt;
    }
  }
  Vector xu(r.x.size() + r.u.size());
  xu << r.x, r.u;
  r.cost = xu.dot(cost.D * xu);
  return r;
}
}  // namespace detail

// Simulates the plant under u = K x.
inline RolloutResult rollout(const SystemSpec& spec, const CostSpec& cost,
                             const ControllerRealization& ctrl, const Vector& noise) {
  return detail::simulate(spec, cost, noise, [&](int t, const Vector& xs) {
    return ctrl.K.middleRows(t * spec.m, spec.m) * xs;
  });
}

// Simulates the plant with inputs read off the response map (u = PhiU w); the
// disturbance entering the dynamics is the given noise itself.
inline RolloutResult rollout(const SystemSpec& spec, const CostSpec& cost,
                             const ClosedLoopMap& map, const Vector& noise) {
  Vector u_all = map.PhiU * noise;
  return detail::simulate(spec, cost, noise, [&](int t, const Vector&) {
    return u_all.segment(t * spec.m, spec.m);
  });
}

struct MonteCarloCost {
  double mean = 0.0;
  double std_error = 0.0;
  int count = 0;
};

using NoiseSampler = std::function<Vector(std::mt19937_64&)>;

inline NoiseSampler gaussian_sampler(const Vector& mean, const Matrix& cov) {
  Matrix half = psd_sqrt(cov);
  return [mean, half](std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    Vector z(mean.size());
    for (int i = 0; i < z.size(); ++i) z[i] = n01(rng);
    return (mean + half * z).eval();
  };
}

inline MonteCarloCost monte_carlo_cost(const SystemSpec& spec, const CostSpec& cost,
                                       const ClosedLoopMap& map,
                                       const NoiseSampler& sampler, int count,
                                       uint64_t seed) {
  if (count < 1) throw ValidationError("sample count must be at least 1");
  std::mt19937_64 rng(seed);
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < count; ++i) {
    const double c = rollout(spec, cost, map, sampler(rng)).cost;
    sum += c;
    sumsq += c * c;
  }
  MonteCarloCost out;
  out.count = count;
  out.mean = sum / count;
  const double var = std::max(0.0, sumsq / count - out.mean * out.mean);
  out.std_error = count > 1 ? std::sqrt(var / (count - 1)) : 0.0;
  return out;
}

// One noise trajectory per row, ordered (x_0, w_0 .. w_{N-2}).
struct SampleSet {
  Matrix trajectories;

  int count() const { return static_cast<int>(trajectories.rows()); }
  int dim() const { return static_cast<int>(trajectories.cols()); }
  Vector sample(int i) const { return trajectories.row(i).transpose(); }

  void validate(int expected_dim) const {
    if (count() < 1) throw ValidationError("sample set is empty");
    if (dim() != expected_dim)
      throw ValidationError("sample dimension " + std::to_string(dim()) +
                            " does not match stacked noise dimension " +
                            std::to_string(expected_dim));
  }

  Vector mean() const { return trajectories.colwise().mean().transpose(); }

  // Empirical second moment (about zero) and covariance (about the mean).
  Matrix second_moment() const {
    return trajectories.transpose() * trajectories / count();
  }
  Matrix covariance() const {
    Matrix centered = trajectories.rowwise() - trajectories.colwise().mean();
    return centered.transpose() * centered / count();
  }
};

inline SampleSet draw_gaussian_samples(int n, const Vector& mean, const Matrix& cov,
                                       uint64_t seed) {
  auto sampler = gaussian_sampler(mean, cov);
  std::mt19937_64 rng(seed);
  SampleSet set;
  set.trajectories.resize(n, mean.size());
  for (int i = 0; i < n; ++i) set.trajectories.row(i) = sampler(rng).transpose();
  return set;
}

}  // namespace sinkdrc
