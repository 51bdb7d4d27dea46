#include <doctest.h>

#include <cmath>

#include "fbsde/closed_form.hpp"
#include "fbsde/engine.hpp"
#include "fbsde/parallel.hpp"
#include "fbsde/solver.hpp"

using namespace fbsde;

namespace {

Scenario baseline(std::size_t n_paths, int n_steps = 200) {
  Scenario s;
  s.market = make_market(1, 1, 1.0, {0.2});
  s.generator.kind = "quadratic_discount";
  s.generator.beta = 0.1;
  s.claim.value = 0.5;
  s.initial_wealth = 1.0;
  s.numerics.n_paths = n_paths;
  s.numerics.n_steps = n_steps;
  return s;
}

}  // namespace

TEST_CASE("constant claim under the pure quadratic driver") {
  const PathEnsemble p = simulate_brownian(make_uniform_grid(1.0, 20), 1, 1, 5000, 1);
  const std::vector<double> k(5000, 0.4);
  BsdeOptions o;
  o.basis.ridge = 0.0;
  const SubSolution r =
      solve_bsde_fixed_strategy(Generator::exponential_ce(1), k, p, nullptr, forward_wealth(0.0, nullptr, p), o);
  for (double v : r.Y.data()) REQUIRE(std::abs(v - 0.4) <= 1e-12);
  for (double v : r.Z.data()) REQUIRE(std::abs(v) <= 1e-12);
  CHECK(std::abs(r.k_terminal_mean) <= 1e-12);
}

TEST_CASE("deterministic discounting of a constant claim") {
  const PathEnsemble p = simulate_brownian(make_uniform_grid(1.0, 200), 1, 1, 2000, 1);
  const std::vector<double> F(2000, 0.5);
  const SubSolution r = solve_bsde_fixed_strategy(Generator::quadratic_discount(0.1, 1.0, 1), F, p, nullptr,
                                                  forward_wealth(0.0, nullptr, p), BsdeOptions{});
  CHECK(std::abs(r.y0 - 0.5 * std::exp(-0.1)) <= 2e-3);
}

TEST_CASE("tanh claim terminal residual") {
  // The claim level is a regression feature; at scale 0.5 the Euler floor sits
  // well below 1e-2 at 200 steps.
  Scenario s = baseline(100000);
  s.market = make_market(1, 1, 1.0, {0.0});
  s.claim = Claim{};
  s.claim.kind = ClaimKind::tanh_terminal;
  s.claim.scale = 0.5;
  const Problem pb = make_problem(s, Dynamics::market);
  const ProcessPath X = forward_wealth(s.initial_wealth, nullptr, pb.paths);
  const SubSolution r = solve_bsde_fixed_strategy(pb.g, pb.terminal, pb.paths, nullptr, X, BsdeOptions{}, pb.features());
  MESSAGE("K_T rms " << r.k_terminal_rms);
  CHECK(r.k_terminal_rms < 1e-2);
  CHECK(r.k_min_increment >= -1e-10 - 10.0 * r.k_terminal_rms);
}

TEST_CASE("auxiliary BSDE") {
  const std::size_t np = 20000;
  const PathEnsemble p = simulate_brownian(make_uniform_grid(1.0, 50), 2, 1, np, 3);
  RegressionBasis exact;
  exact.ridge = 0.0;
  SUBCASE("deterministic discount, no density") {
    ProcessPath b(np, 50, 1, Timing::predictable);
    double total = 0.0;
    for (int i = 0; i < 50; ++i) {
      const double v = 0.1 + 0.2 * p.grid().t(i);
      std::fill_n(b.slice(i), np, v);
      total += v * p.grid().dt(i);
    }
    const ProcessPath zero(np, 50, 1, Timing::predictable, 0.0);
    const AuxSolution a = solve_auxiliary_bsde(b, &zero, p, exact);
    for (double v : a.U.data()) REQUIRE(std::abs(v - total) <= 1e-10);
    for (double v : a.V.data()) REQUIRE(std::abs(v) <= 1e-10);
  }
  SUBCASE("constant coefficients") {
    const ProcessPath b(np, 50, 1, Timing::predictable, 0.1), c(np, 50, 1, Timing::predictable, 0.3);
    const AuxSolution a = solve_auxiliary_bsde(b, &c, p, exact);
    for (std::size_t q = 0; q < np; q += 211) CHECK(a.U(q, 50) == doctest::Approx(0.145 + 0.3 * p.W(50, 1)[q]));
    // V_tilde = -0.3 and U_0 = 0.1 (the exact split leaves no drift to estimate).
    CHECK(a.u0 == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(a.residual_rms <= 1e-10);
  }
}

TEST_CASE("strategy utility") {
  const PathEnsemble p = simulate_brownian(make_uniform_grid(1.0, 50), 1, 1, 10000, 2);
  const std::vector<double> zero(10000, 0.0);
  const StrategyUtility u = utility_of_strategy(Generator::quadratic_discount(0.0, 1.0, 1), zero, p, nullptr, 0.7, {});
  CHECK(std::abs(u.value) <= 1e-12);
  CHECK(u.utility == doctest::Approx(0.7));

  // Cash invariance of the exponential driver.
  Claim c;
  c.kind = ClaimKind::tanh_terminal;
  const std::vector<double> F = evaluate_claim(c, p);
  const ProcessPath pi(10000, 50, 1, Timing::predictable, 0.3);
  const Generator g = Generator::exponential_ce(1);
  const double u1 = utility_of_strategy(g, F, p, &pi, 1.0, {}).utility;
  const double u0 = utility_of_strategy(g, F, p, &pi, 0.0, {}).utility;
  CHECK(u1 - u0 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("no-trading fixed point") {
  Scenario s = baseline(20000, 100);
  s.market = make_market(1, 1, 1.0, {0.0});
  const Problem pb = make_problem(s);
  const FBSDESolution sol = picard_solve(pb.g, pb.terminal, pb.paths, pb.x0, solver_options(s.numerics));
  CHECK(sol.converged);
  double worst = 0.0;
  for (double v : sol.pi_star.data()) worst = std::max(worst, std::abs(v));
  CHECK(worst <= 1e-6);
  const SubSolution ref = solve_bsde_fixed_strategy(pb.g, pb.terminal, pb.paths, nullptr,
                                                    forward_wealth(pb.x0, nullptr, pb.paths), BsdeOptions{});
  CHECK(sol.y0 == doctest::Approx(ref.y0).epsilon(1e-9));
}

TEST_CASE("baseline Picard iteration against the closed form") {
  const Scenario s = baseline(20000);
  const Problem pb = make_problem(s);
  const FBSDESolution sol = picard_solve(pb.g, pb.terminal, pb.paths, pb.x0, solver_options(s.numerics));
  const double C = std::exp(-0.1) * 1.5 + 0.02 * (1.0 - std::exp(-0.1)) / 0.1;
  CHECK(sol.converged);
  CHECK(sol.iterations <= 30);
  CHECK(std::abs(sol.y0 + s.initial_wealth - C) <= std::max(3.0 * sol.y0_se, 5e-3));
  CHECK(sol.optimizer_residual <= s.numerics.tol_path);
  CHECK(sol.forward_residual <= 1e-12);
  CHECK(sol.touching_residual <= 1e-8);

  SUBCASE("density bookkeeping at the solution") {
    const Density M = stochastic_exponential(sol.c_star, pb.paths);
    std::vector<double> mT(M.M.slice(200), M.M.slice(200) + 20000);
    const MeanStat m = mean_stat(mT);
    CHECK(std::abs(m.mean - 1.0) <= 5.0 * m.se);
    const std::vector<double> l = terminal_log_density(&sol.b_star, &sol.c_star, pb.paths);
    const Discount D = make_discount(sol.b_star, pb.paths.grid());
    for (std::size_t q = 0; q < 20000; q += 397)
      CHECK(l[q] == doctest::Approx(D.logD(q, 200) + M.logM(q, 200)).epsilon(1e-12));
  }
}

TEST_CASE("iteration cap reports a non-converged solution") {
  Scenario s = baseline(5000, 50);
  s.numerics.picard_max_iter = 2;
  const Problem pb = make_problem(s);
  const FBSDESolution sol = picard_solve(pb.g, pb.terminal, pb.paths, pb.x0, solver_options(s.numerics));
  CHECK_FALSE(sol.converged);
  CHECK(sol.iterations == 2);
  CHECK(sol.y0_history.size() == 2);
  CHECK_FALSE(sol.status.empty());
}

TEST_CASE("system residual of an exact solution") {
  Scenario s = baseline(5000, 50);
  const CompleteQuadratic c = solve_complete_quadratic(s);
  const SystemResidual r = bsde_residual(c.problem.g, c.problem.terminal, c.problem.paths, c.solution.X,
                                         c.solution.Y, c.solution.Z, &c.solution.pi_star);
  // The terminal match is exact up to the regression representation of F.
  CHECK(r.terminal_mismatch_rms <= c.representation_rms + 1e-12);
  CHECK(r.rms <= 5.0 * c.problem.paths.grid().dt(0));
}
