// Small dense linear-algebra helpers shared across modules.
#pragma once

#include <cmath>

#include "sinkdrc/core.hpp"

namespace sinkdrc {

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

// Symmetric PSD square root with eigenvalue clipping. Eigenvalues below
// clip_rel * max(|eig|) are treated as zero; genuinely negative spectra are
// rejected.
inline Matrix psd_sqrt(const Matrix& a, double clip_rel = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a));
  const Vector ev = es.eigenvalues();
  const double scale = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  if (ev.minCoeff() < -1e-8 * scale)
    throw ValidationError("matrix is not positive semidefinite (min eigenvalue " +
                          std::to_string(ev.minCoeff()) + ")");
  Vector root = ev.cwiseMax(0.0);
  for (int i = 0; i < root.size(); ++i)
    root[i] = root[i] <= clip_rel * scale ? 0.0 : std::sqrt(root[i]);
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

// log|A| for symmetric positive definite A; throws if A is not PD.
inline double logdet_pd(const Matrix& a) {
  Eigen::LLT<Matrix> llt(symmetrize(a));
  if (llt.info() != Eigen::Success)
    throw ValidationError("matrix is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

inline bool is_positive_definite(const Matrix& a) {
  Eigen::LLT<Matrix> llt(symmetrize(a));
  return llt.info() == Eigen::Success;
}

struct GoldenResult {
  double x = 0.0;
  double value = 0.0;
};

// Golden-section minimization of a convex scalar function on [a, b]; ties
// resolve toward the left end. f may return +inf inside the bracket.
template <typename F>
GoldenResult golden_section(const F& f, double a, double b, double rel_tol = 1e-9,
                            int max_iter = 400) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < max_iter && (b - a) > rel_tol * (std::abs(a) + std::abs(b));
       ++it) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    }
  }
  GoldenResult r;
  if (f1 <= f2) {
    r.x = x1;
    r.value = f1;
  } else {
    r.x = x2;
    r.value = f2;
  }
  return r;
}

// Numerically stable log(sum_i w_i * exp(v_i)) with w_i >= 0.
inline double log_sum_exp(const Vector& v, const Vector& w) {
  double vmax = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < v.size(); ++i)
    if (w[i] > 0.0) vmax = std::max(vmax, v[i]);
  if (!std::isfinite(vmax)) return -std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (int i = 0; i < v.size(); ++i)
    if (w[i] > 0.0) acc += w[i] * std::exp(v[i] - vmax);
  return vmax + std::log(acc);
}

}  // namespace sinkdrc
