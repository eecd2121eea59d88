#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "sinkdrc/synthesis.hpp"
#include "test_util.hpp"

using namespace sinkdrc;
using sinkdrc::testutil::random_matrix;
using sinkdrc::testutil::random_psd;

namespace {

SystemSpec scalar_system(int N, double a, double b = 1.0, double e = 1.0) {
  return SystemSpec::time_invariant(N, Matrix::Constant(1, 1, a),
                                    Matrix::Constant(1, 1, b),
                                    Matrix::Constant(1, 1, e));
}

SampleSet samples_from_rows(const Matrix& rows) {
  SampleSet s;
  s.trajectories = rows;
  return s;
}

// Finite-horizon dynamic-programming oracle for the expected quadratic cost
// under known moments (state weight Qx, input weight Ru per step, x0 and w_t
// independent with the given covariances).
double riccati_h2_cost(const SystemSpec& spec, const Matrix& Qx, const Matrix& Ru,
                       const Matrix& x0_cov, const Matrix& w_cov) {
  std::vector<Matrix> P(spec.N);
  P[spec.N - 1] = Qx;  // last input is free and optimally zero
  for (int t = spec.N - 2; t >= 0; --t) {
    const Matrix& A = spec.A[t];
    const Matrix& B = spec.B[t];
    const Matrix G = Ru + B.transpose() * P[t + 1] * B;
    const Matrix K = -G.ldlt().solve(B.transpose() * P[t + 1] * A);
    const Matrix acl = A + B * K;
    P[t] = Qx + K.transpose() * Ru * K + acl.transpose() * P[t + 1] * acl;
  }
  double cost = (P[0] * x0_cov).trace();
  for (int t = 0; t + 1 < spec.N; ++t)
    cost += (P[t + 1] * spec.E[t] * w_cov * spec.E[t].transpose()).trace();
  return cost;
}

SynthesisRequest tiny_request(double eps, double rho_scale, Strategy strategy) {
  SynthesisRequest req;
  req.system = scalar_system(2, 1.2);
  req.cost = CostSpec::identity(req.system);
  req.samples = samples_from_rows((Matrix(1, 2) << 0.6, -0.4).finished());
  req.ref = GaussianReference::isotropic(2, 0.4);
  req.amb.eps = eps;
  req.amb.rho =
      rho_scale * feasibility_threshold(req.samples, req.ref, eps) + 0.2;
  req.strategy = strategy;
  return req;
}

// Exhaustive refined grid search over the free causal controls combined with
// the dual risk evaluation.
double brute_force_wc(const SynthesisRequest& req, int rounds, int pts) {
  const auto sys = build_stacked(req.system);
  CausalParametrization par(req.system, sys);
  REQUIRE(par.dim() == 3);
  Vector center = Vector::Zero(3);
  double half = 3.0;
  double best = std::numeric_limits<double>::infinity();
  Vector best_z = center;
  for (int round = 0; round < rounds; ++round) {
    for (int i0 = 0; i0 < pts; ++i0)
      for (int i1 = 0; i1 < pts; ++i1)
        for (int i2 = 0; i2 < pts; ++i2) {
          Vector z(3);
          z << center[0] - half + 2.0 * half * i0 / (pts - 1),
              center[1] - half + 2.0 * half * i1 / (pts - 1),
              center[2] - half + 2.0 * half * i2 / (pts - 1);
          const Matrix phi = par.map(z).stacked();
          auto loss =
              QuadraticLoss::pure_quadratic(phi.transpose() * req.cost.D * phi);
          double v;
          try {
            v = worst_case_risk(loss, req.samples, req.ref, req.amb.rho,
                                req.amb.eps)
                    .value;
          } catch (const Error&) {
            continue;
          }
          if (v < best) {
            best = v;
            best_z = z;
          }
        }
    center = best_z;
    half *= 2.5 / (pts - 1);  // shrink around the incumbent
  }
  return best;
}

}  // namespace

TEST_CASE("program assembly") {
  SECTION("eps = 0 emits no exponential cones and keeps the LMIs") {
    auto req = tiny_request(0.0, 1.0, Strategy::DirectConic);
    auto [prog, handles] = assemble_sinkhorn_program(req);
    bool has_exp = false;
    int psd_blocks = 0;
    for (const auto& c : prog.cones()) {
      has_exp |= c.kind == conic::ConeKind::Exp;
      psd_blocks += c.kind == conic::ConeKind::PsdTriangle;
    }
    CHECK_FALSE(has_exp);
    CHECK(psd_blocks == 3);  // M, one sample LMI, cost epigraph
    CHECK(prog.validate().errors.empty());
  }
  SECTION("variable catalog for the 2-step scalar plant with two samples") {
    auto req = tiny_request(0.5, 1.2, Strategy::DirectConic);
    req.samples = samples_from_rows((Matrix(2, 2) << 0.6, -0.4, 0.1, 0.3).finished());
    req.amb.rho = feasibility_threshold(req.samples, req.ref, 0.5) + 0.3;
    auto [prog, handles] = assemble_sinkhorn_program(req);
    auto count = [&](const std::string& name) {
      for (const auto& v : prog.vars())
        if (v.name == name) return v.count;
      return -1;
    };
    // causal entries: response maps are 2x2 block lower-triangular
    CHECK(count("PhiX") == 3);
    CHECK(count("PhiU") == 3);
    CHECK(count("Q") == 3);  // svec of a 2x2 symmetric block
    CHECK(count("s") == 2);
    CHECK(count("zeta") == 2);
    CHECK(count("lambda") == 1);
    CHECK(prog.validate().errors.empty());
  }
  SECTION("mass-spring assembly stays under a second") {
    SynthesisRequest req;
    req.system = SystemSpec::mass_spring(10);
    req.cost = CostSpec::identity(req.system);
    req.samples = draw_gaussian_samples(
        20, Vector::Zero(req.system.s()),
        0.5 * Matrix::Identity(req.system.s(), req.system.s()), 7);
    req.ref = GaussianReference::isotropic(req.system.s(), 0.1);
    req.amb = {3.5, 0.01};
    const auto t0 = std::chrono::steady_clock::now();
    auto [prog, handles] = assemble_sinkhorn_program(req);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(elapsed < 1.0);
    CHECK(prog.validate().errors.empty());
    CHECK(prog.num_vars() > 500);
  }
}

TEST_CASE("sinkhorn synthesis") {
  SECTION("all-zero samples with a collapsed ball cost nothing") {
    SynthesisRequest req = tiny_request(0.0, 0.0, Strategy::OuterLambdaSearch);
    req.samples = samples_from_rows(Matrix::Zero(1, 2));
    req.amb.rho = 0.0;
    auto bundle = synthesize_sinkhorn(req);
    CHECK(bundle.wc_cost == Catch::Approx(0.0).margin(1e-9));
    CHECK(bundle.achievability <= 1e-6);
  }
  SECTION("tiny instance matches the brute-force grid oracle") {
    auto req = tiny_request(0.15, 1.5, Strategy::OuterLambdaSearch);
    auto bundle = synthesize_sinkhorn(req);
    const double bf = brute_force_wc(req, 3, 17);
    CHECK(bundle.wc_cost <= bf + 1e-6);
    CHECK(bundle.wc_cost == Catch::Approx(bf).epsilon(5e-3));
  }
  SECTION("outer search and one-shot conic strategies agree") {
    for (double eps : {0.0, 0.3}) {
      auto outer =
          synthesize_sinkhorn(tiny_request(eps, 1.5, Strategy::OuterLambdaSearch));
      auto direct = synthesize_sinkhorn(tiny_request(eps, 1.5, Strategy::DirectConic));
      CHECK(outer.wc_cost ==
            Catch::Approx(direct.wc_cost).epsilon(1e-4).margin(1e-6));
      CHECK(direct.achievability <= 1e-6);
    }
  }
  SECTION("worst-case cost is nonincreasing in eps and below Wasserstein") {
    auto base = tiny_request(0.0, 0.0, Strategy::OuterLambdaSearch);
    base.amb.rho = 0.8;
    const double wass = synthesize_wasserstein(base).wc_cost;
    double prev = wass;
    for (double eps : {1e-4, 0.05, 0.3}) {
      auto req = base;
      req.amb.eps = eps;
      const double v = synthesize_sinkhorn(req).wc_cost;
      CHECK(v <= prev + 1e-6);
      prev = v;
    }
  }
  SECTION("solution ties out against the dual risk of its own map") {
    auto req = tiny_request(0.2, 1.4, Strategy::OuterLambdaSearch);
    auto bundle = synthesize_sinkhorn(req);
    const Matrix phi = bundle.map.stacked();
    auto loss = QuadraticLoss::pure_quadratic(phi.transpose() * req.cost.D * phi);
    auto risk = worst_case_risk(loss, req.samples, req.ref, req.amb.rho, req.amb.eps);
    CHECK(bundle.wc_cost == Catch::Approx(risk.value).epsilon(1e-5));
    CHECK(bundle.lambda_star == Catch::Approx(risk.lambda_star).epsilon(1e-3));
    CHECK(bundle.wc_cost ==
          Catch::Approx(bundle.lambda_star * req.amb.rho + bundle.s_i.mean())
              .margin(1e-8));
  }
  SECTION("radius below the threshold is rejected with the threshold") {
    auto req = tiny_request(0.5, 1.0, Strategy::OuterLambdaSearch);
    const double rho_min = feasibility_threshold(req.samples, req.ref, 0.5);
    req.amb.rho = 0.5 * rho_min;
    CHECK_THROWS_AS(synthesize_sinkhorn(req), InfeasibleError);
  }
}

TEST_CASE("wasserstein synthesis") {
  SECTION("rho = 0 reduces to the empirical H2 response") {
    std::mt19937_64 rng(77);
    SynthesisRequest req;
    req.system = scalar_system(3, 0.9);
    req.cost = CostSpec::identity(req.system);
    req.samples = samples_from_rows(random_matrix(4, 3, rng, 0.7));
    req.ref = GaussianReference::isotropic(3, 0.3);
    req.amb.rho = 0.0;
    auto bundle = synthesize_wasserstein(req);
    auto h2 = synthesize_h2(
        req.system, req.cost,
        MomentSpec::make(Vector::Zero(3), req.samples.second_moment()));
    CHECK(bundle.wc_cost == Catch::Approx(h2.wc_cost).epsilon(1e-9));
  }
  SECTION("agrees with vanishing-eps sinkhorn synthesis") {
    auto base = tiny_request(0.0, 0.0, Strategy::OuterLambdaSearch);
    base.amb.rho = 0.6;
    const double wass = synthesize_wasserstein(base).wc_cost;
    auto tiny = base;
    tiny.amb.eps = 1e-6;
    const double sink = synthesize_sinkhorn(tiny).wc_cost;
    CHECK(sink == Catch::Approx(wass).epsilon(1e-3));
  }
}

TEST_CASE("h2 synthesis") {
  SECTION("zero moments cost nothing") {
    auto spec = scalar_system(3, 1.0);
    auto bundle = synthesize_h2(spec, CostSpec::identity(spec),
                                MomentSpec::make(Vector::Zero(3), Matrix::Zero(3, 3)));
    CHECK(bundle.wc_cost == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("matches the dynamic-programming oracle") {
    std::mt19937_64 rng(88);
    for (int rep = 0; rep < 5; ++rep) {
      auto spec = sinkdrc::testutil::random_system(rng, 5, 2);
      auto cost = CostSpec::identity(spec);
      auto moments = MomentSpec::make(Vector::Zero(spec.s()),
                                      Matrix::Identity(spec.s(), spec.s()));
      auto bundle = synthesize_h2(spec, cost, moments);
      const double dp = riccati_h2_cost(
          spec, Matrix::Identity(spec.d, spec.d), Matrix::Identity(spec.m, spec.m),
          Matrix::Identity(spec.d, spec.d), Matrix::Identity(spec.p, spec.p));
      CHECK(bundle.wc_cost == Catch::Approx(dp).epsilon(1e-8));
    }
  }
}

TEST_CASE("expected cost evaluation") {
  SECTION("identity-like padding gives sigma^2 times the noise dimension") {
    auto spec = scalar_system(2, 0.0, 1.0, 1.0);
    auto sys = build_stacked(spec);
    ControllerRealization zero;
    zero.K = Matrix::Zero(2, 2);
    auto map = closed_loop_from_controller(spec, sys, zero);
    // PhiX = E = I, PhiU = 0, D weights states only
    Matrix d = Matrix::Zero(4, 4);
    d.topLeftCorner(2, 2).setIdentity();
    auto cost = CostSpec::from_matrix(d);
    auto v = evaluate_expected_cost(
        map, cost, MomentSpec::make(Vector::Zero(2), 0.7 * Matrix::Identity(2, 2)));
    CHECK(v == Catch::Approx(0.7 * 2));
  }
  SECTION("hand-computed Frobenius value") {
    ClosedLoopMap map;
    map.PhiX.resize(2, 2);
    map.PhiX << 1, 0, 2, 1;
    map.PhiU = Matrix::Zero(2, 2);
    auto cost = CostSpec::from_matrix(Matrix::Identity(4, 4));
    auto v = evaluate_expected_cost(
        map, cost, MomentSpec::make(Vector::Zero(2), Matrix::Identity(2, 2)));
    CHECK(v == Catch::Approx(6.0));
  }
  SECTION("agrees with the Monte-Carlo rollout mean") {
    auto spec = SystemSpec::mass_spring(5);
    auto cost = CostSpec::identity(spec);
    auto sys = build_stacked(spec);
    std::mt19937_64 rng(9);
    auto map = closed_loop_from_controller(
        spec, sys, sinkdrc::testutil::random_causal_controller(spec, rng, 0.2));
    auto moments = MomentSpec::make(Vector::Zero(spec.s()),
                                    0.3 * Matrix::Identity(spec.s(), spec.s()));
    auto mc = monte_carlo_cost(spec, cost, map,
                               gaussian_sampler(moments.mean, moments.cov), 60000, 4);
    CHECK(std::abs(mc.mean - evaluate_expected_cost(map, cost, moments)) <=
          3.0 * mc.std_error);
  }
}

TEST_CASE("q-swap certificate") {
  SECTION("solved instances pass, perturbations behave as the proof predicts") {
    for (auto strategy : {Strategy::OuterLambdaSearch, Strategy::DirectConic}) {
      auto req = tiny_request(0.25, 1.6, strategy);
      auto bundle = synthesize_sinkhorn(req);
      auto rep = q_swap_certificate(bundle, req);
      INFO("worst constraint: " << rep.worst_constraint << " violation "
                                << rep.worst_violation);
      CHECK(rep.pass);

      // enlarging Q beyond Phi'DPhi keeps feasibility and the objective
      auto padded = bundle;
      padded.Q_star += 0.1 * Matrix::Identity(2, 2);
      auto rep_padded = q_swap_certificate(padded, req);
      CHECK(rep_padded.pass);

      // halving the multiplier must break the certificate
      auto broken = bundle;
      broken.lambda_star *= 0.5;
      auto rep_broken = q_swap_certificate(broken, req);
      CHECK_FALSE(rep_broken.pass);
    }
  }
  SECTION("random small instances pass the certificate") {
    std::mt19937_64 rng(121);
    int solved = 0;
    for (int rep = 0; rep < 8; ++rep) {
      SynthesisRequest req;
      req.system = sinkdrc::testutil::random_system(rng, 3, 2);
      const int s = req.system.s();
      req.cost = CostSpec::from_matrix(
          random_psd(req.system.N * (req.system.d + req.system.m), rng, 0.2));
      req.samples = samples_from_rows(random_matrix(3, s, rng, 0.5));
      req.ref = GaussianReference::make(random_matrix(s, 1, rng, 0.2),
                                        random_psd(s, rng, 0.3));
      std::uniform_real_distribution<double> epsd(0.05, 0.6);
      req.amb.eps = epsd(rng);
      req.amb.rho =
          1.4 * feasibility_threshold(req.samples, req.ref, req.amb.eps) + 0.2;
      req.strategy = Strategy::OuterLambdaSearch;
      auto bundle = synthesize_sinkhorn(req);
      auto report = q_swap_certificate(bundle, req);
      INFO("instance " << rep << " worst " << report.worst_constraint << " = "
                       << report.worst_violation);
      CHECK(report.pass);
      ++solved;
    }
    CHECK(solved == 8);
  }
}
