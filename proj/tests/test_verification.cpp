#include <doctest.h>

#include <cmath>

#include "fbsde/closed_form.hpp"
#include "fbsde/verification.hpp"

using namespace fbsde;

namespace {

Scenario baseline(std::size_t n_paths = 20000) {
  Scenario s;
  s.market = make_market(1, 1, 1.0, {0.2});
  s.generator.kind = "quadratic_discount";
  s.generator.beta = 0.1;
  s.claim.value = 0.5;
  s.initial_wealth = 1.0;
  s.numerics.n_paths = n_paths;
  return s;
}

const CompleteQuadratic& complete() {
  static const CompleteQuadratic c = [] {
    CompleteQuadratic r = solve_complete_quadratic(baseline());
    fill_optimal_coefficients(r.problem.g, r.solution, r.problem.paths);
    return r;
  }();
  return c;
}

ProcessPath filled(std::size_t np, int N, int dim, double v) { return ProcessPath(np, N, dim, Timing::predictable, v); }

}  // namespace

TEST_CASE("orthogonality on the baseline") {
  const Check c = verify_orthogonality(complete().solution, complete().problem.paths);
  CHECK(c.main_pass);
  CHECK(c.control_detected);
  CHECK(c.pass);
}

TEST_CASE("optimality sampling on the baseline") {
  const CompleteQuadratic& c = complete();
  OptimalityOptions o;
  const Check k = verify_optimality(c.problem.g, c.problem.terminal, c.problem.paths, c.solution, o);
  CHECK(k.main_pass);
  CHECK(k.control_detected);

  SUBCASE("zero step size reproduces the optimum exactly") {
    const ProcessPath d = perturbation_direction(c.problem.paths, 1, 42, 0);
    ProcessPath same = c.solution.pi_star;
    for (std::size_t j = 0; j < same.data().size(); ++j) same.data()[j] += 0.0 * d.data()[j];
    const StrategyUtility a = utility_of_strategy(c.problem.g, c.problem.terminal, c.problem.paths,
                                                  &c.solution.pi_star, 1.0, {});
    const StrategyUtility b = utility_of_strategy(c.problem.g, c.problem.terminal, c.problem.paths, &same, 1.0, {});
    CHECK(a.value == b.value);
  }
  SUBCASE("perturbations are bounded and reproducible") {
    const ProcessPath d1 = perturbation_direction(c.problem.paths, 1, 42, 3);
    const ProcessPath d2 = perturbation_direction(c.problem.paths, 1, 42, 3);
    CHECK(d1.data() == d2.data());
    for (double v : d1.data()) REQUIRE(std::abs(v) <= 3.0);
  }
}

TEST_CASE("density identity with constant coefficients") {
  const std::size_t np = 20000;
  const PathEnsemble p = simulate_brownian(make_uniform_grid(1.0, 200), 2, 1, np, 4);
  const ProcessPath b = filled(np, 200, 1, 0.1), ct = filled(np, 200, 1, 0.3);
  const AuxSolution a = solve_auxiliary_bsde(b, &ct, p, RegressionBasis{});
  const Check c = verify_density_identity(a.U, a.V, b, &ct, p);
  CHECK(c.statistic <= 5.0 * p.grid().dt(0));
  CHECK(c.main_pass);
  CHECK(c.control_detected);
  // The shifted U_0 shows up as the factor e^{0.1}.
  CHECK(c.control_statistic == doctest::Approx(std::expm1(0.1)).epsilon(0.05));

  SUBCASE("zero coefficients give one on both sides") {
    const ProcessPath zero = filled(np, 200, 1, 0.0);
    const AuxSolution z = solve_auxiliary_bsde(zero, &zero, p, RegressionBasis{});
    CHECK(verify_density_identity(z.U, z.V, zero, &zero, p).statistic == 0.0);
  }
}

TEST_CASE("integration-by-parts identity") {
  const std::size_t np = 100000;
  const PathEnsemble p = simulate_brownian(make_uniform_grid(1.0, 100), 1, 1, np, 6);
  SUBCASE("constant coefficients against the analytic value") {
    const double analytic = -0.3 * 0.5 * 1.0;
    const Check c = verify_integration_by_parts(filled(np, 100, 1, 0.0), filled(np, 100, 1, 0.3), filled(np, 100, 1, 0.5), p, 100,
                                    &analytic);
    CHECK(c.main_pass);
    CHECK(c.control_detected);
  }
  SUBCASE("sign strategy with discounting") {
    ProcessPath pi(np, 100, 1, Timing::predictable);
    for (int i = 0; i < 100; ++i)
      for (std::size_t q = 0; q < np; ++q) pi(q, i) = p.W(i, 0)[q] >= 0.0 ? 1.0 : -1.0;
    const Check c = verify_integration_by_parts(filled(np, 100, 1, 0.1), filled(np, 100, 1, 0.2), pi, p, 100);
    CHECK(c.main_pass);
    CHECK(c.control_detected);
  }
  SUBCASE("zero strategy") {
    const Check c = verify_integration_by_parts(filled(np, 100, 1, 0.1), filled(np, 100, 1, 0.2), filled(np, 100, 1, 0.0), p, 50);
    CHECK(c.statistic == 0.0);
  }
}

TEST_CASE("drift of the linearized solution") {
  const CompleteQuadratic& c = complete();
  SubmartingaleOptions o;
  const Check k = verify_submartingale_control(c.problem.g, c.solution, c.problem.paths, o);
  CHECK(k.main_pass);
  CHECK(k.control_detected);
}

TEST_CASE("linear representation") {
  const CompleteQuadratic& c = complete();
  const Check k = verify_linear_representation(c.solution, c.problem.terminal, c.problem.paths);
  CHECK(k.main_pass);
  CHECK(k.control_detected);

  SUBCASE("constant claim without premium equals the discounted claim") {
    Scenario s = baseline(5000);
    s.market = make_market(1, 1, 1.0, {0.0});
    s.initial_wealth = 0.0;
    CompleteQuadratic z = solve_complete_quadratic(s);
    fill_optimal_coefficients(z.problem.g, z.solution, z.problem.paths);
    const Check l = verify_linear_representation(z.solution, z.problem.terminal, z.problem.paths);
    const double linear = l.details[1].second;
    CHECK(linear == doctest::Approx(0.5 * std::exp(-0.1)).epsilon(1e-10));
    CHECK(z.solution.y0 == doctest::Approx(0.5 * std::exp(-0.1)).epsilon(1e-10));
  }
}

TEST_CASE("pointwise gradient and forward consistency") {
  const CompleteQuadratic& c = complete();
  const Check g = verify_pointwise_gradient(c.problem.g, c.solution, c.problem.paths, 1e-4);
  CHECK(g.statistic <= 1e-10);
  CHECK(g.pass);
  const Check f = verify_forward_consistency(c.solution, c.problem.paths);
  CHECK(f.pass);

  FBSDESolution stale = c.solution;
  stale.converged = false;
  CHECK_FALSE(verify_pointwise_gradient(c.problem.g, stale, c.problem.paths, 1e-4).main_pass);
}

TEST_CASE("full report") {
  const CompleteQuadratic& c = complete();
  VerifyOptions o = verify_options(baseline().numerics);
  o.perturbations = 4;
  o.young_samples = 1000;
  const VerificationReport r = verify_solution(c.problem, c.solution, o);
  CHECK(r.checks.size() == 9);
  CHECK(r.verdict);
  const json j = r.to_json();
  CHECK(j["verdict"] == true);
  CHECK(j["checks"].size() == 9);

  SUBCASE("a corrupted strategy fails") {
    FBSDESolution bad = c.solution;
    for (double& v : bad.pi_star.data()) v *= 1.5;
    const VerificationReport rb = verify_solution(c.problem, std::move(bad), o);
    CHECK_FALSE(rb.verdict);
    CHECK_FALSE(rb.find("forward_consistency")->pass);
  }
}
