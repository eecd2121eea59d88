#include <catch2/catch_amalgamated.hpp>

#include "sinkdrc/system.hpp"
#include "test_util.hpp"

using namespace sinkdrc;
using sinkdrc::testutil::random_causal_controller;
using sinkdrc::testutil::random_psd;
using sinkdrc::testutil::random_system;

namespace {

SystemSpec scalar_system(int N, double a, double b = 1.0, double e = 1.0) {
  return SystemSpec::time_invariant(N, Matrix::Constant(1, 1, a),
                                    Matrix::Constant(1, 1, b),
                                    Matrix::Constant(1, 1, e));
}

}  // namespace

TEST_CASE("build_stacked: scalar N=2 with a=2") {
  auto spec = scalar_system(2, 2.0);
  auto sys = build_stacked(spec);
  Matrix Z(2, 2), bigA(2, 2);
  Z << 0, 0, 1, 0;
  bigA << 2, 0, 0, 0;
  CHECK((sys.Z - Z).norm() == 0.0);
  CHECK((sys.bigA - bigA).norm() == 0.0);
  CHECK((sys.bigE - Matrix::Identity(2, 2)).norm() == 0.0);
  CHECK(sys.s == 2);
}

TEST_CASE("build_stacked: zero dynamics N=3") {
  SystemSpec spec;
  spec.N = 3;
  spec.d = 2;
  spec.m = 1;
  spec.p = 2;
  Matrix E0 = Matrix::Identity(2, 2) * 3.0, E1 = Matrix::Identity(2, 2) * 5.0;
  spec.A = {Matrix::Zero(2, 2), Matrix::Zero(2, 2)};
  spec.B = {Matrix::Zero(2, 1), Matrix::Zero(2, 1)};
  spec.E = {E0, E1};
  auto sys = build_stacked(spec);
  CHECK(sys.bigA.norm() == 0.0);
  Matrix expected = Matrix::Zero(6, 6);
  expected.block(0, 0, 2, 2).setIdentity();
  expected.block(2, 2, 2, 2) = E0;
  expected.block(4, 4, 2, 2) = E1;
  CHECK((sys.bigE - expected).norm() == 0.0);
}

TEST_CASE("build_stacked: mass-spring benchmark blocks") {
  auto spec = SystemSpec::mass_spring(10);
  Matrix A(2, 2), B(2, 1);
  A << 1, 1, -1, 0;
  B << 0, 1;
  CHECK((spec.A[4] - A).norm() == 0.0);
  CHECK((spec.B[4] - B).norm() == 0.0);
  CHECK((spec.E[4] - Matrix::Identity(2, 2)).norm() == 0.0);
  auto sys = build_stacked(spec);
  CHECK(sys.s == 2 + 9 * 2);
  // Z has identity blocks only on the first block subdiagonal.
  for (int t = 0; t + 1 < spec.N; ++t)
    CHECK((sys.Z.block(2 * (t + 1), 2 * t, 2, 2) - Matrix::Identity(2, 2)).norm() ==
          0.0);
  CHECK(sys.Z.cwiseAbs().sum() == Catch::Approx(2.0 * 9));
}

TEST_CASE("build_stacked: dimension mismatch names the offending index") {
  SystemSpec spec = scalar_system(3, 1.0);
  spec.A[1] = Matrix::Zero(2, 2);
  try {
    build_stacked(spec);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("A[1]") != std::string::npos);
  }
}

TEST_CASE("achievability residual") {
  auto spec = scalar_system(2, 2.0);
  auto sys = build_stacked(spec);
  SECTION("open-loop map has residual zero") {
    ClosedLoopMap map;
    map.PhiX.resize(2, 2);
    map.PhiX << 1, 0, 2, 1;  // (I - Z A)^{-1} E expanded by hand
    map.PhiU = Matrix::Zero(2, 2);
    CHECK(achievability_residual(sys, map) == Catch::Approx(0.0).margin(1e-14));
  }
  SECTION("zero maps leave the full E") {
    ClosedLoopMap map;
    map.PhiX = Matrix::Zero(2, 2);
    map.PhiU = Matrix::Zero(2, 2);
    CHECK(achievability_residual(sys, map) == Catch::Approx(sys.bigE.norm()));
  }
}

TEST_CASE("closed loop from controller") {
  SECTION("K = 0 gives the open-loop response") {
    auto spec = scalar_system(3, 1.5);
    auto sys = build_stacked(spec);
    ControllerRealization zero;
    zero.K = Matrix::Zero(3, 3);
    auto map = closed_loop_from_controller(spec, sys, zero);
    CHECK(map.PhiU.norm() == 0.0);
    const Matrix open_loop =
        (Matrix::Identity(3, 3) - sys.Z * sys.bigA).inverse() * sys.bigE;
    CHECK((map.PhiX - open_loop).norm() < 1e-12);
  }
  SECTION("deadbeat: K = -a I zeroes the x0 response after one step") {
    auto spec = scalar_system(2, 1.0);
    auto sys = build_stacked(spec);
    ControllerRealization ctrl;
    ctrl.K = -Matrix::Identity(2, 2);
    auto map = closed_loop_from_controller(spec, sys, ctrl);
    CHECK(map.PhiX(0, 0) == Catch::Approx(1.0));
    CHECK(map.PhiX(1, 0) == Catch::Approx(0.0).margin(1e-14));
  }
}

TEST_CASE("controller round trip and causality") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    auto spec = random_system(rng, 6, 3, /*square_noise=*/true);
    auto sys = build_stacked(spec);
    auto ctrl = random_causal_controller(spec, rng);
    auto map = closed_loop_from_controller(spec, sys, ctrl);
    REQUIRE(achievability_residual(sys, map) <= 1e-9);
    REQUIRE(causality_violation(spec, map) == 0.0);
    auto back = recover_controller(spec, map);
    REQUIRE((back.K - ctrl.K).norm() <= 1e-9);
  }
}

TEST_CASE("recover_controller edge cases") {
  SECTION("PhiU = 0 recovers K = 0") {
    auto spec = scalar_system(2, 2.0);
    auto sys = build_stacked(spec);
    ClosedLoopMap map;
    map.PhiX.resize(2, 2);
    map.PhiX << 1, 0, 2, 1;
    map.PhiU = Matrix::Zero(2, 2);
    auto ctrl = recover_controller(spec, map);
    CHECK(ctrl.K.norm() == 0.0);
    CHECK_FALSE(ctrl.ill_conditioned);
  }
  SECTION("rectangular state response is rejected") {
    std::mt19937_64 rng(3);
    SystemSpec spec;
    spec.N = 2;
    spec.d = 2;
    spec.m = 1;
    spec.p = 1;  // p != d
    spec.A = {Matrix::Identity(2, 2)};
    spec.B = {Matrix::Ones(2, 1)};
    spec.E = {Matrix::Ones(2, 1)};
    auto sys = build_stacked(spec);
    auto map = closed_loop_from_controller(spec, sys,
                                           random_causal_controller(spec, rng));
    CHECK_THROWS_AS(recover_controller(spec, map), UnsupportedRecoveryError);
  }
}

TEST_CASE("rollout") {
  SECTION("zero noise gives zero cost") {
    auto spec = scalar_system(4, 1.2);
    auto cost = CostSpec::identity(spec);
    ControllerRealization ctrl;
    ctrl.K = Matrix::Zero(4, 4);
    auto r = rollout(spec, cost, ctrl, Vector::Zero(spec.s()));
    CHECK(r.cost == 0.0);
  }
  SECTION("hand-simulated scalar case: cost 5") {
    auto spec = scalar_system(2, 2.0);
    auto cost = CostSpec::identity(spec);
    ControllerRealization ctrl;
    ctrl.K = Matrix::Zero(2, 2);
    Vector noise(2);
    noise << 1.0, 0.0;
    auto r = rollout(spec, cost, ctrl, noise);
    CHECK(r.x[0] == Catch::Approx(1.0));
    CHECK(r.x[1] == Catch::Approx(2.0));
    CHECK(r.cost == Catch::Approx(5.0));
  }
  SECTION("rollout cost equals ||D^1/2 Phi w||^2 on random draws") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01;
    for (int rep = 0; rep < 10; ++rep) {
      auto spec = random_system(rng);
      auto sys = build_stacked(spec);
      auto cost = CostSpec::from_matrix(
          random_psd(spec.N * (spec.d + spec.m), rng, 1e-6));
      auto ctrl = random_causal_controller(spec, rng);
      auto map = closed_loop_from_controller(spec, sys, ctrl);
      for (int draw = 0; draw < 10; ++draw) {
        Vector w(spec.s());
        for (int i = 0; i < w.size(); ++i) w[i] = n01(rng);
        const double via_map = (cost.Dhalf * map.stacked() * w).squaredNorm();
        const double via_plant = rollout(spec, cost, ctrl, w).cost;
        const double via_map_rollout = rollout(spec, cost, map, w).cost;
        CHECK(via_plant == Catch::Approx(via_map).epsilon(1e-8).margin(1e-10));
        CHECK(via_map_rollout == Catch::Approx(via_map).epsilon(1e-8).margin(1e-10));
      }
    }
  }
}

TEST_CASE("monte carlo cost") {
  SECTION("degenerate sampler at zero") {
    auto spec = scalar_system(3, 1.0);
    auto cost = CostSpec::identity(spec);
    auto sys = build_stacked(spec);
    ControllerRealization ctrl;
    ctrl.K = Matrix::Zero(3, 3);
    auto map = closed_loop_from_controller(spec, sys, ctrl);
    auto mc = monte_carlo_cost(spec, cost, map,
                               [&](std::mt19937_64&) { return Vector::Zero(3); },
                               100, 5);
    CHECK(mc.mean == 0.0);
    CHECK(mc.std_error == 0.0);
  }
  SECTION("Gaussian mean matches the trace identity within 3 SE") {
    std::mt19937_64 rng(21);
    auto spec = random_system(rng, 4, 2);
    auto sys = build_stacked(spec);
    auto cost = CostSpec::identity(spec);
    auto map = closed_loop_from_controller(spec, sys,
                                           random_causal_controller(spec, rng));
    Vector mu = 0.3 * Vector::Ones(spec.s());
    Matrix cov = random_psd(spec.s(), rng, 0.05);
    auto mc = monte_carlo_cost(spec, cost, map, gaussian_sampler(mu, cov), 100000, 42);
    const Matrix phi = map.stacked();
    const Matrix g = phi.transpose() * cost.D * phi;
    const double analytic = (g * cov).trace() + mu.dot(g * mu);
    CHECK(std::abs(mc.mean - analytic) <= 3.0 * mc.std_error);
  }
}

TEST_CASE("sample sets validate dimensions and moments") {
  auto spec = scalar_system(3, 1.0);
  auto set = draw_gaussian_samples(50, Vector::Zero(spec.s()),
                                   0.5 * Matrix::Identity(spec.s(), spec.s()), 9);
  set.validate(spec.s());
  CHECK(set.count() == 50);
  CHECK_THROWS_AS(set.validate(spec.s() + 1), ValidationError);
  // determinism given the seed
  auto again = draw_gaussian_samples(50, Vector::Zero(spec.s()),
                                     0.5 * Matrix::Identity(spec.s(), spec.s()), 9);
  CHECK((set.trajectories - again.trajectories).norm() == 0.0);
}
