#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "sinkdrc/duality.hpp"
#include "test_util.hpp"

using namespace sinkdrc;
using sinkdrc::testutil::random_matrix;
using sinkdrc::testutil::random_psd;

namespace {

SampleSet samples_from_rows(const Matrix& rows) {
  SampleSet s;
  s.trajectories = rows;
  return s;
}

// Definition-level oracle: lambda*eps*log E_nu[exp((l(z)-lambda c)/(lambda eps))]
// by importance sampling. The proposal is an overdispersed Gaussian roughly
// matching the product integrand (twice its covariance), so the re-weighted
// integrand stays a genuine non-constant Gaussian and the rule converges
// geometrically. The value itself is assembled from l, c and the nu-density
// directly, not from the closed form.
struct PartitionOracle {
  GaussianReference proposal;
  std::function<double(const Vector&)> integrand;  // log of
};

PartitionOracle make_partition_oracle(const QuadraticLoss& loss, double lambda,
                                      const GaussianReference& ref, double eps,
                                      const Vector& w) {
  const int s = ref.dim();
  const Matrix M =
      lambda * (Matrix::Identity(s, s) + 0.5 * eps * ref.cov_inv) - loss.Q;
  const Vector v = loss.q + lambda * (w + 0.5 * eps * (ref.cov_inv * ref.mean));
  Eigen::LLT<Matrix> llt(M);
  REQUIRE(llt.info() == Eigen::Success);
  auto proposal =
      GaussianReference::make(llt.solve(v), 2.0 * lambda * eps * llt.solve(
                                                Matrix::Identity(s, s)));
  const double log_norm_nu = -0.5 * s * std::log(2.0 * M_PI) - 0.5 * ref.logdet_cov;
  const double log_norm_prop =
      -0.5 * s * std::log(2.0 * M_PI) - 0.5 * proposal.logdet_cov;
  PartitionOracle o{proposal, nullptr};
  o.integrand = [=](const Vector& z) {
    const Vector rn = z - ref.mean;
    const Vector rp = z - proposal.mean;
    const double log_nu = log_norm_nu - 0.5 * rn.dot(ref.cov_inv * rn);
    const double log_prop = log_norm_prop - 0.5 * rp.dot(proposal.cov_inv * rp);
    return (loss.eval(z) - lambda * (w - z).squaredNorm()) / (lambda * eps) +
           log_nu - log_prop;
  };
  return o;
}

double log_partition_quadrature(const QuadraticLoss& loss, double lambda,
                                const GaussianReference& ref, double eps,
                                const Vector& w) {
  auto o = make_partition_oracle(loss, lambda, ref, eps, w);
  return lambda * eps *
         detail::log_gaussian_expectation_quadrature(o.proposal, 120, o.integrand);
}

double log_partition_mc(const QuadraticLoss& loss, double lambda,
                        const GaussianReference& ref, double eps, const Vector& w,
                        int count, uint64_t seed) {
  auto o = make_partition_oracle(loss, lambda, ref, eps, w);
  return lambda * eps *
         detail::log_gaussian_expectation_mc(o.proposal, count, seed, o.integrand,
                                             nullptr);
}

}  // namespace

TEST_CASE("log partition closed form") {
  SECTION("unit instance equals -log 2") {
    auto loss = QuadraticLoss::pure_quadratic(Matrix::Zero(1, 1));
    auto ref = GaussianReference::isotropic(1, 1.0);
    const double v = log_partition(loss, 1.0, ref, 2.0, Vector::Zero(1));
    CHECK(v == Catch::Approx(-std::log(2.0)).margin(1e-12));
    CHECK(log_partition_quadrature(loss, 1.0, ref, 2.0, Vector::Zero(1)) ==
          Catch::Approx(-std::log(2.0)).margin(1e-9));
  }
  SECTION("translation invariance for pure shifts") {
    auto loss = QuadraticLoss::pure_quadratic(Matrix::Zero(2, 2));
    const double centered = log_partition(
        loss, 0.8, GaussianReference::isotropic(2, 0.7), 0.5, Vector::Zero(2));
    for (double shift : {-3.0, 0.4, 12.0}) {
      auto ref = GaussianReference::isotropic(2, 0.7, shift);
      const double moved =
          log_partition(loss, 0.8, ref, 0.5, Vector::Constant(2, shift));
      CHECK(moved == Catch::Approx(centered).margin(1e-9));
    }
  }
  SECTION("matches the definition by quadrature and Monte-Carlo") {
    std::mt19937_64 rng(51);
    std::uniform_int_distribution<int> dim(1, 3);
    for (int rep = 0; rep < 8; ++rep) {
      const int s = dim(rng);
      auto ref = GaussianReference::make(random_matrix(s, 1, rng, 0.4),
                                         random_psd(s, rng, 0.3));
      auto loss = QuadraticLoss::make(random_psd(s, rng, 0.05),
                                      random_matrix(s, 1, rng, 0.3));
      const Vector w = random_matrix(s, 1, rng, 0.8);
      const double eps = 0.2 + 0.5 * rep / 8.0;
      const double lambda = lambda_lower_bound(loss, ref, eps) * 1.8 + 0.3;
      const double closed = log_partition(loss, lambda, ref, eps, w);
      const double quad = log_partition_quadrature(loss, lambda, ref, eps, w);
      CHECK(quad == Catch::Approx(closed).epsilon(1e-6).margin(1e-8));
      if (rep < 2) {
        const double mc = log_partition_mc(loss, lambda, ref, eps, w, 1000000, 7 + rep);
        CHECK(mc == Catch::Approx(closed).epsilon(1e-3).margin(2e-3));
      }
    }
  }
  SECTION("multiplier below the spectral bound diverges") {
    auto loss = QuadraticLoss::pure_quadratic(Matrix::Identity(2, 2));
    auto ref = GaussianReference::isotropic(2, 1.0);
    CHECK_THROWS_AS(log_partition(loss, 0.5, ref, 1.0, Vector::Zero(2)),
                    DivergentIntegralError);
  }
}

TEST_CASE("dual objective") {
  std::mt19937_64 rng(61);
  SECTION("zero loss with feasible radius stays nonnegative over a lambda grid") {
    const int s = 2;
    auto loss = QuadraticLoss::pure_quadratic(Matrix::Zero(s, s));
    auto ref = GaussianReference::isotropic(s, 0.8);
    auto samples = samples_from_rows(random_matrix(3, s, rng, 0.7));
    const double eps = 0.6;
    const double rho = 1.2 * feasibility_threshold(samples, ref, eps);
    double best = std::numeric_limits<double>::infinity();
    for (double lambda = 1e-4; lambda < 1e3; lambda *= 1.7)
      best = std::min(best, dual_objective(loss, lambda, samples, ref, rho, eps));
    CHECK(best >= -1e-6);
  }
  SECTION("convex in lambda (midpoint inequality)") {
    for (int rep = 0; rep < 100; ++rep) {
      const int s = 1 + rep % 3;
      auto ref = GaussianReference::make(random_matrix(s, 1, rng, 0.3),
                                         random_psd(s, rng, 0.4));
      auto loss = QuadraticLoss::make(
          random_psd(s, rng, 0.02) - 0.2 * Matrix::Identity(s, s),
          random_matrix(s, 1, rng, 0.3));
      auto samples = samples_from_rows(random_matrix(2, s, rng, 0.6));
      const double eps = 0.1 + 0.01 * rep;
      const double rho = feasibility_threshold(samples, ref, eps) + 0.3;
      const double lb = lambda_lower_bound(loss, ref, eps);
      std::uniform_real_distribution<double> u(1e-3, 4.0);
      const double l1 = lb + u(rng), l2 = lb + u(rng);
      const double mid = 0.5 * (l1 + l2);
      const double lhs = dual_objective(loss, mid, samples, ref, rho, eps);
      const double rhs = 0.5 * dual_objective(loss, l1, samples, ref, rho, eps) +
                         0.5 * dual_objective(loss, l2, samples, ref, rho, eps);
      CHECK(lhs <= rhs + 1e-9 * (1.0 + std::abs(rhs)));
    }
  }
  SECTION("eps -> 0 recovers the Wasserstein dual objective") {
    for (int rep = 0; rep < 5; ++rep) {
      const int s = 1 + rep % 2;
      auto ref = GaussianReference::isotropic(s, 1.0);
      auto loss = QuadraticLoss::make(random_psd(s, rng, 0.1),
                                      random_matrix(s, 1, rng, 0.4));
      auto samples = samples_from_rows(random_matrix(3, s, rng, 0.8));
      const double lambda = lambda_lower_bound(loss, ref, 0.0) + 0.7;
      const double rho = 0.5;
      const double tiny = dual_objective(loss, lambda, samples, ref, rho, 1e-8);
      const double limit = dual_objective(loss, lambda, samples, ref, rho, 0.0);
      CHECK(tiny == Catch::Approx(limit).margin(1e-6));
    }
  }
}

TEST_CASE("worst case risk") {
  SECTION("collapsed ball returns the empirical loss exactly") {
    std::mt19937_64 rng(71);
    const int s = 3;
    auto loss = QuadraticLoss::make(random_psd(s, rng), random_matrix(s, 1, rng));
    auto ref = GaussianReference::isotropic(s, 1.0);
    auto samples = samples_from_rows(random_matrix(4, s, rng));
    auto eval = worst_case_risk(loss, samples, ref, 0.0, 0.0);
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) expect += loss.eval(samples.sample(i)) / 4.0;
    CHECK(eval.value == Catch::Approx(expect).margin(1e-14));
    CHECK(std::isinf(eval.lambda_star));
  }
  SECTION("reference 1-d instance agrees with the grid primal oracle") {
    auto loss = QuadraticLoss::pure_quadratic(Matrix::Constant(1, 1, 0.5));
    auto ref = GaussianReference::isotropic(1, 1.0);
    auto samples = samples_from_rows(Matrix::Zero(1, 1));
    auto dual = worst_case_risk(loss, samples, ref, 1.0, 0.1);
    PrimalOracleOptions opts;
    opts.grid_points = 2001;
    const double primal = primal_oracle_1d(loss, samples, ref, 1.0, 0.1, opts);
    CHECK(primal <= dual.value + 1e-6);
    CHECK(dual.value == Catch::Approx(primal).epsilon(1e-2));
    // pinned ahead of the main build: both routes give 0.5 (the per-sample
    // term vanishes at lambda = 1/2 where lambda*eps/2 equals M)
    CHECK(dual.value == Catch::Approx(0.5).margin(1e-6));
    CHECK(dual.lambda_star == Catch::Approx(0.5).margin(1e-4));
  }
  SECTION("nonincreasing in eps at fixed rho") {
    std::mt19937_64 rng(81);
    const int s = 2;
    auto loss = QuadraticLoss::pure_quadratic(random_psd(s, rng, 0.1));
    auto ref = GaussianReference::isotropic(s, 0.5);
    auto samples = samples_from_rows(random_matrix(3, s, rng, 0.7));
    const double rho = feasibility_threshold(samples, ref, 0.5) + 0.5;
    const double v0 = worst_case_risk(loss, samples, ref, rho, 0.0).value;
    const double v1 = worst_case_risk(loss, samples, ref, rho, 0.05).value;
    const double v2 = worst_case_risk(loss, samples, ref, rho, 0.5).value;
    CHECK(v2 <= v1 + 1e-6);
    CHECK(v1 <= v0 + 1e-6);
  }
  SECTION("nondecreasing in rho at fixed eps") {
    std::mt19937_64 rng(82);
    auto loss = QuadraticLoss::pure_quadratic(random_psd(2, rng, 0.1));
    auto ref = GaussianReference::isotropic(2, 0.5);
    auto samples = samples_from_rows(random_matrix(3, 2, rng, 0.7));
    const double rho0 = feasibility_threshold(samples, ref, 0.3) + 0.1;
    double prev = -std::numeric_limits<double>::infinity();
    for (double rho : {rho0, rho0 + 0.5, rho0 + 2.0}) {
      const double v = worst_case_risk(loss, samples, ref, rho, 0.3).value;
      CHECK(v >= prev - 1e-9);
      prev = v;
    }
  }
  SECTION("infeasible radius raises with the threshold attached") {
    auto loss = QuadraticLoss::pure_quadratic(Matrix::Zero(1, 1));
    auto ref = GaussianReference::isotropic(1, 1.0);
    auto samples = samples_from_rows(Matrix::Zero(1, 1));
    const double rho_min = feasibility_threshold(samples, ref, 2.0);
    try {
      worst_case_risk(loss, samples, ref, 0.5 * rho_min, 2.0);
      FAIL("expected InfeasibleError");
    } catch (const InfeasibleError& e) {
      CHECK(e.rho_min == Catch::Approx(rho_min));
    }
  }
  SECTION("eps -> 0 matches the Wasserstein value") {
    std::mt19937_64 rng(91);
    auto loss = QuadraticLoss::make(random_psd(2, rng, 0.05),
                                    random_matrix(2, 1, rng, 0.2));
    auto ref = GaussianReference::isotropic(2, 1.0);
    auto samples = samples_from_rows(random_matrix(3, 2, rng, 0.6));
    const double w = worst_case_risk(loss, samples, ref, 0.8, 0.0).value;
    const double tiny = worst_case_risk(loss, samples, ref, 0.8, 1e-8).value;
    CHECK(tiny == Catch::Approx(w).epsilon(1e-6));
  }
}

TEST_CASE("primal oracle") {
  SECTION("collapsed Wasserstein ball returns the empirical loss") {
    auto loss = QuadraticLoss::pure_quadratic(Matrix::Constant(1, 1, 0.7));
    auto ref = GaussianReference::isotropic(1, 1.0);
    Matrix rows(2, 1);
    rows << 0.5, -1.0;
    auto samples = samples_from_rows(rows);
    PrimalOracleOptions opts;
    opts.grid_points = 801;
    const double v = primal_oracle_1d(loss, samples, ref, 0.0, 0.0, opts);
    const double expect = 0.5 * (loss.eval(samples.sample(0)) +
                                 loss.eval(samples.sample(1)));
    CHECK(v == Catch::Approx(expect).margin(2e-3));
  }
  SECTION("barely feasible radius pins the value near E_nu[l]") {
    auto loss = QuadraticLoss::pure_quadratic(Matrix::Constant(1, 1, 0.5));
    auto ref = GaussianReference::isotropic(1, 1.0);
    auto samples = samples_from_rows(Matrix::Zero(1, 1));
    const double eps = 50.0;
    const double rho = feasibility_threshold(samples, ref, eps) * 1.001;
    PrimalOracleOptions opts;
    opts.grid_points = 1201;
    const double primal = primal_oracle_1d(loss, samples, ref, rho, eps, opts);
    const double enu = 0.5 * 1.0;  // E_{N(0,1)}[0.5 z^2]
    CHECK(std::abs(primal - enu) <= 5e-2);
    const double dual = worst_case_risk(loss, samples, ref, rho, eps).value;
    CHECK(dual == Catch::Approx(primal).epsilon(1e-2));
  }
  SECTION("weak duality over sampled ball members") {
    std::mt19937_64 rng(101);
    auto loss = QuadraticLoss::pure_quadratic(Matrix::Constant(1, 1, 0.5));
    auto ref = GaussianReference::isotropic(1, 1.0);
    auto samples = samples_from_rows(Matrix::Zero(1, 1));
    const double rho = 1.0, eps = 0.1;
    auto dual = worst_case_risk(loss, samples, ref, rho, eps);
    auto grid = make_primal_grid(samples, ref, 401);
    auto nu = grid.measure();
    DiscreteMeasure center = DiscreteMeasure::dirac(Vector::Zero(1));
    std::uniform_real_distribution<double> theta(-1.0, 1.0);
    int members = 0;
    for (int rep = 0; rep < 40 && members < 20; ++rep) {
      DiscreteMeasure q = nu;
      const double a = theta(rng), b = theta(rng);
      for (int j = 0; j < q.size(); ++j)
        q.weights[j] *= std::exp(a * q.points(j, 0) +
                                 0.3 * b * q.points(j, 0) * q.points(j, 0));
      q.weights /= q.weights.sum();
      double value;
      try {
        value = discrete_sinkhorn(center, q, nu, eps).value;
      } catch (const ConvergenceError&) {
        continue;
      }
      if (value > rho) continue;
      ++members;
      double eq = 0.0;
      for (int j = 0; j < q.size(); ++j)
        eq += q.weights[j] * loss.eval(Vector::Constant(1, q.points(j, 0)));
      CHECK(eq <= dual.value + 1e-6);
    }
    CHECK(members >= 10);
  }
}
