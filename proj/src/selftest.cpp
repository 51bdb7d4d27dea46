#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fbsde/engine.hpp"
#include "fbsde/generators.hpp"
#include "fbsde/regression.hpp"
#include "fbsde/runner.hpp"
#include "fbsde/solver.hpp"
#include "fbsde/verification.hpp"

namespace fbsde {

namespace {

struct Suite {
  std::ostream& out;
  int failed = 0;
  int total = 0;

  void check(const std::string& name, const std::function<bool()>& body) {
    bool ok = false;
    std::string why;
    try {
      ok = body();
    } catch (const std::exception& e) {
      why = e.what();
    }
    ++total;
    if (!ok) ++failed;
    out << (ok ? "ok    " : "FAIL  ") << name;
    if (!why.empty()) out << "  (" << why << ')';
    out << '\n';
  }

  void expect_error(const std::string& name, ErrorCode code, const std::function<void()>& body) {
    check(name, [&] {
      try {
        body();
      } catch (const Error& e) {
        return e.code() == code;
      }
      return false;
    });
  }
};

bool all_equal(const ProcessPath& p, double v, double tol = 0.0) {
  for (double x : p.data())
    if (std::abs(x - v) > tol) return false;
  return true;
}

}  // namespace

int selftest(std::ostream& out) {
  Suite s{out};
  constexpr std::size_t np = 2000;
  constexpr int N = 20;
  const TimeGrid grid = make_uniform_grid(1.0, N);
  const PathEnsemble p1 = simulate_brownian(grid, 1, 1, np, 7);
  const PathEnsemble p2 = simulate_brownian(grid, 2, 1, np, 7);
  const std::vector<double> zero1{0.0};

  s.check("uniform grid of 4 steps", [] {
    const TimeGrid g = make_uniform_grid(1.0, 4);
    return g.times == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0};
  });
  s.check("single step grid", [] { return make_uniform_grid(2.0, 1).times == std::vector<double>{0.0, 2.0}; });
  s.expect_error("zero steps rejected", ErrorCode::invalid_argument, [] { make_uniform_grid(1.0, 0); });

  s.check("constant claim", [&] {
    Claim c;
    c.value = 0.5;
    for (double v : evaluate_claim(c, p1))
      if (v != 0.5) return false;
    return true;
  });
  s.check("tanh claim at zero level", [] {
    Claim c;
    c.kind = ClaimKind::tanh_terminal;
    return c.payoff(0.0) == 0.0;
  });

  s.check("simulation is deterministic", [&] {
    const PathEnsemble q = simulate_brownian(grid, 1, 1, np, 7);
    for (int i = 0; i < N; ++i)
      for (std::size_t p = 0; p < np; ++p)
        if (q.dW(i, 0)[p] != p1.dW(i, 0)[p]) return false;
    return true;
  });
  s.expect_error("d = 1, n = 2 rejected", ErrorCode::invalid_split, [&] { simulate_brownian(grid, 1, 2, 10, 1); });

  s.check("zero integrand gives zero integral", [&] {
    const ProcessPath z(np, N, 1, Timing::predictable, 0.0);
    return all_equal(ito_integral(z, p1), 0.0);
  });
  s.check("unit integrand gives the Brownian path", [&] {
    const ProcessPath one(np, N, 1, Timing::predictable, 1.0);
    const ProcessPath I = ito_integral(one, p1);
    for (int i = 0; i <= N; ++i)
      for (std::size_t p = 0; p < np; ++p)
        if (std::abs(I(p, i) - p1.W(i, 0)[p]) > 1e-12) return false;
    return true;
  });
  s.check("zero density exponent gives M = 1", [&] {
    return all_equal(stochastic_exponential(ProcessPath(np, N, 1, Timing::predictable), p1).M, 1.0);
  });
  s.check("constant discount is deterministic", [&] {
    const Discount D = make_discount(ProcessPath(np, N, 1, Timing::predictable, 0.3), grid);
    for (int i = 0; i <= N; ++i)
      for (std::size_t p = 0; p < np; ++p)
        if (std::abs(D.D(p, i) - std::exp(-0.3 * grid.t(i))) > 1e-14) return false;
    return true;
  });
  s.check("zero shift leaves the ensemble unchanged", [&] {
    const PathEnsemble q = girsanov_shift(p2, zero1);
    for (int i = 0; i < N; ++i)
      for (int k = 0; k < 2; ++k)
        for (std::size_t p = 0; p < np; ++p)
          if (q.dW(i, k)[p] != p2.dW(i, k)[p]) return false;
    return true;
  });

  s.check("constant regression target", [&] {
    const std::vector<double> t(np, 5.0);
    RegressionBasis b;
    b.ridge = 0.0;
    for (double v : conditional_expectation(t, {p1.W(N, 0)}, b))
      if (std::abs(v - 5.0) > 1e-10) return false;
    return true;
  });
  s.check("affine regression target recovered", [&] {
    std::vector<double> t(np);
    const double* w = p1.W(N, 0);
    for (std::size_t p = 0; p < np; ++p) t[p] = 1.0 + 2.0 * w[p];
    RegressionBasis b;
    b.degree = 1;
    b.ridge = 0.0;
    const std::vector<double> e = conditional_expectation(t, {w}, b);
    for (std::size_t p = 0; p < np; ++p)
      if (std::abs(e[p] - t[p]) > 1e-8) return false;
    return true;
  });
  s.check("deterministic claim has zero representation", [&] {
    const std::vector<double> t(np, 0.7);
    RegressionBasis b;
    b.ridge = 0.0;
    const Representation r = martingale_representation(t, StateFeatures(p1), b);
    return std::abs(r.mean - 0.7) < 1e-12 && all_equal(r.Z, 0.0, 1e-12) && r.residual_max < 1e-12;
  });
  s.check("Brownian motion passes the drift test", [&] {
    ProcessPath w(np, N, 1, Timing::adapted);
    for (int i = 0; i <= N; ++i) std::copy_n(p1.W(i, 0), np, w.slice(i));
    return submartingale_check(w, StateFeatures(p1), RegressionBasis{}, 0.0, true).pass;
  });
  s.check("increasing process passes, decreasing fails", [&] {
    ProcessPath up(np, N, 1, Timing::adapted), down(np, N, 1, Timing::adapted);
    for (int i = 0; i <= N; ++i)
      for (std::size_t p = 0; p < np; ++p) {
        up(p, i) = grid.t(i);
        down(p, i) = -grid.t(i);
      }
    const double tol = 0.5 * grid.dt(0);
    return submartingale_check(up, StateFeatures(p1), RegressionBasis{}, tol).pass &&
           !submartingale_check(down, StateFeatures(p1), RegressionBasis{}, tol).pass;
  });

  s.check("zero shift leaves the generator unchanged", [] {
    const Generator h = Generator::quadratic_discount(0.1, 1.0, 1);
    const Generator g = market_transform(h, {0.0});
    const std::vector<double> z{0.4};
    return g.value(0.3, z) == h.value(0.3, z);
  });
  s.check("exponential optimizer at matching gradient is zero", [] {
    const Generator g = Generator::exponential_ce(1);
    const std::vector<double> z{1.0}, v{1.0};
    return std::abs(pointwise_optimizer(g, 0.0, z, v)[0]) < 1e-14;
  });
  s.expect_error("flat gradient with matching target is ambiguous", ErrorCode::ambiguous_optimizer, [] {
    const Generator g = market_transform(Generator::recursive_kp(0.8, 0.5, 0.1, 0.5, 1), {0.2});
    const std::vector<double> z{0.0}, v{-0.2};
    pointwise_optimizer(g, 1.0, z, v);
  });
  s.expect_error("flat gradient with other target has no solution", ErrorCode::no_solution, [] {
    const Generator g = market_transform(Generator::recursive_kp(0.8, 0.5, 0.1, 0.5, 1), {0.2});
    const std::vector<double> z{0.0}, v{0.3};
    pointwise_optimizer(g, 1.0, z, v);
  });
  s.check("identity driver change", [] {
    const Generator g = Generator::exponential_ce(1);
    const std::vector<double> c{0.0}, pi{0.0}, zb{0.6};
    return std::abs(driver_change(g, 0.0, c, 0.0, 1.0, 0.0, 0.0, pi, 0.0, zb) - 0.18) < 1e-15;
  });
  s.check("coefficients at the minimum of the exponential generator", [] {
    const Generator g = Generator::exponential_ce(1);
    const std::vector<double> w{0.0};
    const OptimalCoefficients c = extract_optimal_coefficients(g, 0.0, w);
    return c.c[0] == 0.0 && c.conjugate == 0.0 && c.touching_residual == 0.0;
  });
  s.expect_error("power generator at non-positive level", ErrorCode::no_gradient, [] {
    const Generator g = Generator::power_ce(0.5, 1);
    const std::vector<double> w{0.1};
    extract_optimal_coefficients(g, -0.5, w);
  });

  s.check("constant claim under the quadratic driver", [&] {
    const Generator g = Generator::exponential_ce(1);
    const std::vector<double> t(np, 0.4);
    const ProcessPath X = forward_wealth(0.0, nullptr, p1);
    BsdeOptions o;
    o.basis.ridge = 0.0;
    const SubSolution r = solve_bsde_fixed_strategy(g, t, p1, nullptr, X, o);
    return all_equal(r.Y, 0.4, 1e-12) && all_equal(r.Z, 0.0, 1e-12);
  });
  s.check("zero auxiliary coefficients", [&] {
    const AuxSolution a = solve_auxiliary_bsde(ProcessPath(np, N, 1, Timing::predictable), nullptr, p1, {});
    return all_equal(a.U, 0.0, 1e-12) && all_equal(a.V, 0.0, 1e-12);
  });
  s.check("zero strategy and claim under the quadratic driver", [&] {
    const Generator g = Generator::quadratic_discount(0.0, 1.0, 1);
    const std::vector<double> t(np, 0.0);
    const StrategyUtility u = utility_of_strategy(g, t, p1, nullptr, 0.3, BsdeOptions{});
    return std::abs(u.value) < 1e-12 && std::abs(u.utility - 0.3) < 1e-12;
  });

  s.check("integration-by-parts identity with zero strategy", [&] {
    const ProcessPath b(np, N, 1, Timing::predictable, 0.1), c(np, N, 1, Timing::predictable, 0.3),
        pi(np, N, 1, Timing::predictable, 0.0);
    const Check k = verify_integration_by_parts(b, c, pi, p1, N);
    return k.details[0].second == 0.0 && k.details[2].second == 0.0;
  });
  s.check("density identity with zero coefficients", [&] {
    const ProcessPath U(np, N, 1, Timing::adapted), V(np, N, 2, Timing::predictable), b(np, N, 1, Timing::predictable);
    return verify_density_identity(U, V, b, nullptr, p2).statistic == 0.0;
  });
  s.check("Fenchel-Young slack on random interior points", [] {
    return verify_young(Generator::power_ce(0.5, 2), 500, 3).main_pass;
  });

  s.check("report compared with itself", [] {
    const json r{{"scenario", {{"a", 1}}}, {"results", {{"x", 1.5}, {"x_se", 0.1}}}};
    const Comparison c = compare_reports(r, r, {"results.x"});
    return c.rows.size() == 1 && c.rows[0].diff == 0.0 && c.warnings.empty();
  });
  s.check("mismatched scenarios warn", [] {
    const json a{{"scenario", {{"a", 1}}}, {"results", {{"x", 1.5}}}};
    const json b{{"scenario", {{"a", 2}}}, {"results", {{"x", 1.0}}}};
    const Comparison c = compare_reports(a, b, {"results.x"});
    return c.warnings.size() == 1 && c.rows[0].diff == -0.5;
  });
  s.expect_error("missing compare key", ErrorCode::key_error, [] {
    const json r{{"results", {{"x", 1.5}}}};
    compare_reports(r, r, {"results.y"});
  });

  out << (s.total - s.failed) << '/' << s.total << " passed\n";
  return s.failed == 0 ? kExitOk : kExitError;
}

}  // namespace fbsde
