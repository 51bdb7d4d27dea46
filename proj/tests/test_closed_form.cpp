#include <doctest.h>

#include <cmath>

#include "fbsde/closed_form.hpp"

using namespace fbsde;

namespace {

Scenario quadratic(int d, int n, std::vector<double> mu, double beta, Claim claim, double x,
                   std::size_t n_paths = 20000) {
  Scenario s;
  s.market = make_market(d, n, 1.0, std::move(mu));
  s.generator.kind = "quadratic_discount";
  s.generator.beta = beta;
  s.generator.gamma = 1.0;
  s.claim = claim;
  s.initial_wealth = x;
  s.numerics.n_paths = n_paths;
  return s;
}

Claim constant(double v) {
  Claim c;
  c.value = v;
  return c;
}

Claim tanh_on(int component, double scale = 1.0) {
  Claim c;
  c.kind = ClaimKind::tanh_terminal;
  c.component = component;
  c.scale = scale;
  return c;
}

double max_abs(const ProcessPath& p) {
  double m = 0.0;
  for (double v : p.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

TEST_CASE("discount weights") {
  CHECK(discount_weight(0.0, 0.2, 0.7) == doctest::Approx(0.5));
  CHECK(discount_weight(0.1, 0.0, 1.0) == doctest::Approx((1.0 - std::exp(-0.1)) / 0.1).epsilon(1e-14));
}

TEST_CASE("complete market utility constant") {
  const CompleteQuadratic c = solve_complete_quadratic(quadratic(1, 1, {0.2}, 0.1, constant(0.5), 1.0));
  const double analytic = std::exp(-0.1) * 1.5 + 0.02 * (1.0 - std::exp(-0.1)) / 0.1;
  CHECK(analytic == doctest::Approx(1.37629).epsilon(1e-5));
  CHECK(c.C == doctest::Approx(analytic).epsilon(1e-12));
  CHECK(std::abs(c.C_mc - analytic) <= 3.0 * c.C_mc_se);
  // The target wealth satisfies the budget constraint under the pricing measure.
  CHECK(std::abs(c.budget_mean - 1.0) <= 3.0 * c.budget_se);
  CHECK(c.solution.optimizer_residual <= 1e-10);
  CHECK(c.solution.touching_residual <= 1e-10);
  CHECK(c.solution.forward_residual <= 1e-12);
}

TEST_CASE("complete market degenerate cases") {
  SUBCASE("no risk premium, no claim") {
    const CompleteQuadratic c = solve_complete_quadratic(quadratic(1, 1, {0.0}, 0.3, constant(0.0), 2.0, 5000));
    CHECK(c.C == doctest::Approx(2.0 * std::exp(-0.3)).epsilon(1e-12));
    CHECK(max_abs(c.solution.pi_star) <= 1e-12);
  }
  SUBCASE("no discount") {
    const CompleteQuadratic c = solve_complete_quadratic(quadratic(1, 1, {0.2}, 0.0, constant(0.0), 1.0, 5000));
    CHECK(c.C == doctest::Approx(1.02).epsilon(1e-12));
  }
}

TEST_CASE("incomplete market") {
  SUBCASE("claims on the traded component carry no penalty") {
    const IncompleteQuadratic ic = solve_incomplete_quadratic(quadratic(2, 1, {0.2}, 0.1, tanh_on(0), 1.0));
    CHECK(std::abs(ic.penalty) <= 3.0 * ic.penalty_se + 1e-3);
    CHECK(std::abs(ic.utility - ic.complete_value) <= 3.0 * std::hypot(ic.utility_se, ic.complete_value_se) + 1e-3);
  }
  SUBCASE("tanh claim on the untraded component") {
    const IncompleteQuadratic ic =
        solve_incomplete_quadratic(quadratic(2, 1, {0.2}, 0.0, tanh_on(1), 1.0, 100000));
    // Entropic penalty log E[exp(-tanh G)], G ~ N(0, 1), by quadrature.
    const double oracle = std::log(gaussian_expectation([](double g) { return std::exp(-std::tanh(g)); }, 0.0, 1.0));
    MESSAGE("penalty " << ic.penalty << " oracle " << oracle);
    CHECK(ic.penalty > 3.0 * ic.penalty_se);
    CHECK(std::abs(ic.penalty - oracle) <= 3.0 * ic.penalty_se + 2e-3);
    // Equal up to the ridge bias of the projections.
    CHECK(ic.utility == doctest::Approx(ic.complete_value - ic.penalty).epsilon(1e-6));
    CHECK(ic.solution.optimizer_residual <= 1e-10);
    CHECK(ic.residual_terminal_discount <= ic.residual_running_discount + 1e-12);
  }
}

TEST_CASE("indifference prices") {
  SUBCASE("complete market, no claim") {
    const PriceReport p = indifference_prices(quadratic(1, 1, {0.2}, 0.1, constant(0.0), 0.0, 5000));
    const double expected = -std::exp(0.1) * 0.02 * (1.0 - std::exp(-0.1)) / 0.1;
    CHECK(expected == doctest::Approx(-0.02103).epsilon(1e-3));
    CHECK(p.x_star == doctest::Approx(expected).epsilon(1e-9));
    CHECK(std::abs(p.utility_claim) <= 1e-12);
  }
  SUBCASE("no premium, constant claim") {
    const PriceReport p = indifference_prices(quadratic(1, 1, {0.0}, 0.1, constant(0.5), 0.0, 5000));
    CHECK(std::abs(p.x_star) <= 2e-3);
  }
  SUBCASE("traded claim has no cost of incompleteness") {
    const PriceReport p = indifference_prices(quadratic(2, 1, {0.2}, 0.1, tanh_on(0), 0.0));
    CHECK(std::abs(p.cost) <= 3.0 * p.cost_se);
    CHECK(std::abs(p.y_star - p.x_star) <= 3.0 * p.cost_se);
  }
  SUBCASE("untraded claim has a positive cost") {
    const PriceReport p = indifference_prices(quadratic(2, 1, {0.2}, 0.0, tanh_on(1), 0.0, 100000));
    CHECK(p.cost > 3.0 * p.cost_se);
    CHECK(p.cost >= -3.0 * p.cost_se);
  }
}

TEST_CASE("recursive utility ODE") {
  const TimeGrid grid = make_uniform_grid(1.0, 200);
  SUBCASE("zero consumption is exponential") {
    const double k = 0.1 * 0.8 / 0.5;
    const std::vector<double> phi = integrate_recursive_ode(k, 0.0, 0.375, 1.3, grid);
    for (int i = 0; i <= 200; ++i) CHECK(std::abs(phi[static_cast<std::size_t>(i)] - 1.3 * std::exp(k * (grid.t(i) - 1.0))) <= 1e-8);
  }
  SUBCASE("rho = alpha is affine") {
    const double k = 0.1, c = 0.4;
    const std::vector<double> phi = integrate_recursive_ode(k, c, 0.0, 2.0, grid);
    for (int i = 0; i <= 200; ++i)
      CHECK(std::abs(phi[static_cast<std::size_t>(i)] - (c + (2.0 - c) * std::exp(k * (grid.t(i) - 1.0)))) <= 1e-8);
  }
  SUBCASE("leaving the positive axis") {
    // The exact flow stays positive; a step far beyond stability overshoots.
    CHECK_THROWS_AS(integrate_recursive_ode(1e4, 1.0, 0.5, 4.0, grid), Error);
  }
}

TEST_CASE("recursive utility closed form") {
  Scenario s;
  s.market = make_market(1, 1, 1.0, {0.0});
  s.generator.kind = "recursive_kp";
  s.generator.alpha = 0.8;
  s.generator.rho = 0.5;
  s.generator.beta = 0.1;
  s.generator.consumption = 0.5;
  s.claim = tanh_on(0);
  s.initial_wealth = 2.0;
  s.numerics.n_paths = 20000;
  const RecursiveUtility r = solve_recursive_utility(s);
  CHECK(r.consistency_max <= r.representation_max + 1e-6);
  CHECK(r.solution.optimizer_residual <= 1e-10);

  SUBCASE("zero driver hedges the claim") {
    s.generator.beta = 0.0;
    const RecursiveUtility z = solve_recursive_utility(s);
    for (double v : z.phi) CHECK(v == doctest::Approx(z.phi.front()));
    CHECK(z.consistency_max <= z.representation_max + 1e-6);
    for (std::size_t j = 0; j < z.solution.Z.data().size(); j += 1009)
      CHECK(z.solution.pi_star.data()[j] == -z.solution.Z.data()[j]);
  }
  SUBCASE("requires a zero price of risk") {
    s.market = make_market(1, 1, 1.0, {0.2});
    CHECK_THROWS_AS(solve_recursive_utility(s), Error);
  }
}

TEST_CASE("exponential example") {
  Scenario s;
  s.market = make_market(2, 1, 1.0, {0.0});
  s.generator.kind = "exp_quadratic";
  s.initial_wealth = 1.0;
  s.numerics.n_paths = 20000;
  SUBCASE("no premium and no claim") {
    const ExponentialExample e = solve_exponential_example(s);
    CHECK(std::abs(e.y_hat0) <= 1e-12);
    CHECK(e.z_hat2_max <= 1e-12);
    CHECK(max_abs(e.solution.pi_star) <= 1e-12);
    const TimeGrid& g = e.problem.paths.grid();
    // X + Y = S with e^{-S} = e^{-x} + (T - t).
    for (int i = 0; i <= g.n_steps; i += 20) {
      const double S = -std::log(std::exp(-1.0) + 1.0 - g.t(i));
      CHECK(e.solution.X(7, i) + e.solution.Y(7, i) == doctest::Approx(S).epsilon(1e-12));
    }
  }
  SUBCASE("premium without claim") {
    s.market = make_market(2, 1, 1.0, {0.2});
    s.numerics.n_paths = 100000;
    const ExponentialExample e = solve_exponential_example(s);
    CHECK(e.residual_rms <= e.threshold);
    CHECK(e.z_hat2_max <= 1e-8);
  }
  SUBCASE("traded claim keeps the untraded coefficient at zero") {
    s.market = make_market(2, 1, 1.0, {0.2});
    s.claim = tanh_on(0);
    const ExponentialExample e = solve_exponential_example(s);
    MESSAGE("z_hat2 rms " << e.z_hat2_rms);
    // Regression noise at 2e4 paths; the acceptance run holds 1e-2 at 1e5.
    CHECK(e.z_hat2_rms <= 3e-2);
  }
}
