// Shared helpers for the unit and acceptance suites.
#pragma once

#include <random>

#include "sinkdrc/system.hpp"

namespace sinkdrc::testutil {

inline Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01;
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * n01(rng);
  return m;
}

inline Matrix random_psd(int k, std::mt19937_64& rng, double ridge = 0.0) {
  Matrix g = random_matrix(k, k, rng);
  return g * g.transpose() / k + ridge * Matrix::Identity(k, k);
}

inline SystemSpec random_system(std::mt19937_64& rng, int max_horizon = 6,
                                int max_dim = 3, bool square_noise = false) {
  std::uniform_int_distribution<int> horizon(2, max_horizon), dim(1, max_dim);
  SystemSpec spec;
  spec.N = horizon(rng);
  spec.d = dim(rng);
  spec.m = dim(rng);
  spec.p = square_noise ? spec.d : dim(rng);
  for (int t = 0; t < spec.N - 1; ++t) {
    spec.A.push_back(random_matrix(spec.d, spec.d, rng, 0.7));
    spec.B.push_back(random_matrix(spec.d, spec.m, rng, 0.7));
    if (square_noise)
      spec.E.push_back(Matrix::Identity(spec.d, spec.d) +
                       random_matrix(spec.d, spec.d, rng, 0.1));
    else
      spec.E.push_back(random_matrix(spec.d, spec.p, rng, 0.7));
  }
  spec.validate();
  return spec;
}

inline ControllerRealization random_causal_controller(const SystemSpec& spec,
                                                      std::mt19937_64& rng,
                                                      double scale = 0.5) {
  ControllerRealization ctrl;
  ctrl.K = Matrix::Zero(spec.N * spec.m, spec.N * spec.d);
  for (int t = 0; t < spec.N; ++t)
    for (int k = 0; k <= t; ++k)
      ctrl.K.block(t * spec.m, k * spec.d, spec.m, spec.d) =
          random_matrix(spec.m, spec.d, rng, scale);
  return ctrl;
}

inline ClosedLoopMap random_achievable_map(const SystemSpec& spec,
                                           const StackedSystem& sys,
                                           std::mt19937_64& rng) {
  return closed_loop_from_controller(spec, sys, random_causal_controller(spec, rng));
}

}  // namespace sinkdrc::testutil
