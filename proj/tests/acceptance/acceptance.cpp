// Acceptance suite: one PASS/FAIL line per criterion on the baseline numerics
// (T = 1, 200 steps, 1e5 paths, seed 42, degree-2 basis).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <sstream>
#include <string>

#include "fbsde/closed_form.hpp"
#include "fbsde/parallel.hpp"
#include "fbsde/runner.hpp"
#include "fbsde/verification.hpp"

using namespace fbsde;

namespace {

constexpr std::size_t kPaths = 100000;
constexpr int kSteps = 200;

struct Outcome {
  bool pass = false;
  std::string detail;
};

Scenario baseline() {
  Scenario s;
  s.market = make_market(1, 1, 1.0, {0.2});
  s.generator.kind = "quadratic_discount";
  s.generator.beta = 0.1;
  s.generator.gamma = 1.0;
  s.claim.value = 0.5;
  s.initial_wealth = 1.0;
  s.numerics.n_paths = kPaths;
  s.numerics.n_steps = kSteps;
  s.numerics.seed = 42;
  return s;
}

Scenario quadratic(int d, int n, double beta, Claim claim, double x) {
  Scenario s = baseline();
  s.market = make_market(d, n, 1.0, {0.2});
  s.generator.beta = beta;
  s.claim = claim;
  s.initial_wealth = x;
  return s;
}

Claim tanh_on(int component) {
  Claim c;
  c.kind = ClaimKind::tanh_terminal;
  c.component = component;
  return c;
}

ProcessPath filled(std::size_t np, int N, int dim, double v) { return ProcessPath(np, N, dim, Timing::predictable, v); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Shared by criteria 1 to 3, then released.
std::unique_ptr<CompleteQuadratic> g_baseline;

const CompleteQuadratic& baseline_solution() {
  if (!g_baseline) {
    g_baseline = std::make_unique<CompleteQuadratic>(solve_complete_quadratic(baseline()));
    fill_optimal_coefficients(g_baseline->problem.g, g_baseline->solution, g_baseline->problem.paths);
  }
  return *g_baseline;
}

Outcome complete_market_oracle() {
  const double analytic = std::exp(-0.1) * 1.5 + 0.02 * (1.0 - std::exp(-0.1)) / 0.1;
  // Picard first, so its ensemble is released before the closed form is built.
  const Scenario s = baseline();
  double y0 = 0.0, y0_se = 0.0;
  int iterations = 0;
  bool converged = false;
  {
    const Problem pb = make_problem(s);
    const FBSDESolution sol = picard_solve(pb.g, pb.terminal, pb.paths, pb.x0, solver_options(s.numerics));
    y0 = sol.y0;
    y0_se = sol.y0_se;
    iterations = sol.iterations;
    converged = sol.converged;
  }
  const double err = std::abs(y0 + s.initial_wealth - analytic);
  const double tol = std::max(3.0 * y0_se, 5e-3);

  const CompleteQuadratic& c = baseline_solution();
  const bool a = std::abs(c.C - 1.37629) <= 5e-6 && std::abs(c.C_mc - analytic) <= 3.0 * c.C_mc_se;
  return {a && converged && err <= tol,
          fmt("C=%.6f C_mc=%.6f (se %.2e) picard Y0+x=%.6f |err|=%.2e tol=%.2e iterations=%d converged=%d", c.C,
              c.C_mc, c.C_mc_se, y0 + s.initial_wealth, err, tol, iterations, converged ? 1 : 0)};
}

Outcome optimality_sampling() {
  const CompleteQuadratic& c = baseline_solution();
  OptimalityOptions o;
  o.perturbations = 20;
  o.seed = 42;
  const Check k = verify_optimality(c.problem.g, c.problem.terminal, c.problem.paths, c.solution, o);
  return {k.pass, fmt("worst gap z=%.3f (>= -3) control z=%.1f (> 3) main=%d control=%d", k.statistic,
                      k.control_statistic, k.main_pass ? 1 : 0, k.control_detected ? 1 : 0)};
}

Outcome orthogonality() {
  const CompleteQuadratic& c = baseline_solution();
  const Check k = verify_orthogonality(c.solution, c.problem.paths);
  g_baseline.reset();
  return {k.pass, fmt("max |z|=%.3f (<= 3) control |z|=%.1f detected=%d", k.statistic, k.control_statistic,
                      k.control_detected ? 1 : 0)};
}

Outcome density_identity() {
  const PathEnsemble p = simulate_brownian(make_uniform_grid(1.0, kSteps), 2, 1, kPaths, 42);
  const ProcessPath b = filled(kPaths, kSteps, 1, 0.1), ct = filled(kPaths, kSteps, 1, 0.3);
  const AuxSolution a = solve_auxiliary_bsde(b, &ct, p, RegressionBasis{});
  const Check k = verify_density_identity(a.U, a.V, b, &ct, p);
  const double limit = 5.0 * p.grid().dt(0);
  return {k.pass && k.statistic <= limit,
          fmt("median relative error %.2e (<= %.2e) control %.2e", k.statistic, limit, k.control_statistic)};
}

Outcome integration_by_parts() {
  const PathEnsemble p = simulate_brownian(make_uniform_grid(1.0, kSteps), 1, 1, kPaths, 42);
  const double analytic = -0.3 * 0.5 * 1.0;
  const Check a = verify_integration_by_parts(filled(kPaths, kSteps, 1, 0.0), filled(kPaths, kSteps, 1, 0.3),
                                  filled(kPaths, kSteps, 1, 0.5), p, kSteps, &analytic);
  ProcessPath pi(kPaths, kSteps, 1, Timing::predictable);
  for (int i = 0; i < kSteps; ++i)
    for (std::size_t q = 0; q < kPaths; ++q) pi(q, i) = p.W(i, 0)[q] >= 0.0 ? 1.0 : -1.0;
  const Check g = verify_integration_by_parts(filled(kPaths, kSteps, 1, 0.1), filled(kPaths, kSteps, 1, 0.2), pi, p, kSteps);
  return {a.pass && g.pass, fmt("constant: lhs=%.5f analytic=%.5f z=%.2f; general: z=%.2f; controls %d/%d",
                                a.details[0].second, analytic, a.statistic, g.statistic, a.control_detected ? 1 : 0,
                                g.control_detected ? 1 : 0)};
}

Outcome young_and_driver_change() {
  bool ok = true;
  double min_slack = INFINITY, worst_grad = 0.0;
  std::string failed;
  for (const Generator& h : {Generator::quadratic_discount(0.1, 1.5, 2), Generator::exponential_ce(2),
                             Generator::power_ce(0.4, 2), Generator::recursive_kp(0.8, 0.5, 0.1, 0.5, 2),
                             Generator::exp_quadratic(2)}) {
    for (const Generator& g : {h, market_transform(h, {0.2})}) {
      const Check c = verify_young(g, 10000, 42);
      for (const auto& [k, v] : c.details) {
        if (k == "max_gradient_error") worst_grad = std::max(worst_grad, v);
        else min_slack = std::min(min_slack, v);
      }
      if (!c.pass) {
        ok = false;
        failed += " " + to_string(g.kind());
      }
    }
  }
  ok = ok && min_slack >= -1e-10 && worst_grad <= 1e-6;
  return {ok, fmt("min slack %.2e (>= -1e-10) max relative gradient error %.2e (<= 1e-6)%s", min_slack, worst_grad,
                  failed.empty() ? "" : (" failed:" + failed).c_str())};
}

Outcome cost_of_incompleteness() {
  Claim none;
  const PriceReport z = indifference_prices(quadratic(1, 1, 0.1, none, 0.0));
  const PriceReport hat = indifference_prices(quadratic(2, 1, 0.1, tanh_on(0), 0.0));
  const PriceReport tilde = indifference_prices(quadratic(2, 1, 0.0, tanh_on(1), 0.0));
  const double x_expected = -std::exp(0.1) * 0.02 * (1.0 - std::exp(-0.1)) / 0.1;
  bool ok = true;
  for (const PriceReport* p : {&z, &hat, &tilde}) ok = ok && p->cost >= -3.0 * p->cost_se;
  ok = ok && std::abs(z.x_star - x_expected) <= 1e-9;
  ok = ok && std::abs(hat.cost) <= 3.0 * hat.cost_se;
  ok = ok && tilde.cost > 3.0 * tilde.cost_se;
  return {ok, fmt("no claim x*=%.5f; hat claim cost %.2e (se %.2e); tanh untraded cost %.4f (se %.2e)", z.x_star,
                  hat.cost, hat.cost_se, tilde.cost, tilde.cost_se)};
}

Outcome recursive_utility() {
  const TimeGrid grid = make_uniform_grid(1.0, kSteps);
  const double k = 0.1 * 0.8 / 0.5;
  const std::vector<double> e = integrate_recursive_ode(k, 0.0, 0.375, 1.3, grid);
  const std::vector<double> a = integrate_recursive_ode(0.1, 0.4, 0.0, 2.0, grid);
  double err_exp = 0.0, err_aff = 0.0;
  for (int i = 0; i <= kSteps; ++i) {
    const std::size_t j = static_cast<std::size_t>(i);
    err_exp = std::max(err_exp, std::abs(e[j] - 1.3 * std::exp(k * (grid.t(i) - 1.0))));
    err_aff = std::max(err_aff, std::abs(a[j] - (0.4 + 1.6 * std::exp(0.1 * (grid.t(i) - 1.0)))));
  }
  Scenario s = baseline();
  s.market = make_market(1, 1, 1.0, {0.0});
  s.generator.kind = "recursive_kp";
  s.generator.alpha = 0.8;
  s.generator.rho = 0.5;
  s.generator.consumption = 0.5;
  s.claim = tanh_on(0);
  s.initial_wealth = 2.0;
  const RecursiveUtility r = solve_recursive_utility(s);
  const bool ok = err_exp <= 1e-8 && err_aff <= 1e-8 && r.consistency_max <= r.representation_max + 1e-6;
  return {ok, fmt("ODE error exponential %.2e affine %.2e; max|X+Y-phi|=%.2e representation max %.2e", err_exp,
                  err_aff, r.consistency_max, r.representation_max)};
}

Outcome exponential_example() {
  Scenario s = baseline();
  s.market = make_market(2, 1, 1.0, {0.2});
  s.generator.kind = "exp_quadratic";
  s.initial_wealth = 1.0;
  s.claim = Claim{};
  double residual = 0.0, threshold = 0.0;
  {
    const ExponentialExample e = solve_exponential_example(s);
    residual = e.residual_rms;
    threshold = e.threshold;
  }
  // A claim on the traded factor keeps the untraded coefficient at zero; its
  // residual also carries the regression floor of the claim and is reported only.
  s.claim = tanh_on(0);
  const ExponentialExample c = solve_exponential_example(s);
  constexpr double kRegressionTolerance = 1e-2;
  const bool ok = residual <= threshold && c.z_hat2_rms <= kRegressionTolerance;
  return {ok, fmt("system residual rms %.2e (<= %.2e); traded claim: untraded coefficient rms %.2e (<= %.0e) max "
                  "%.2e, residual rms %.2e",
                  residual, threshold, c.z_hat2_rms, kRegressionTolerance, c.z_hat2_max, c.residual_rms)};
}

Outcome determinism() {
  Scenario s = baseline();
  s.tasks = {Task::closed_form, Task::numeric_solve};
  const int workers = worker_count();
  std::vector<std::string> payloads;
  for (int w : {1, 1, 4}) {
    set_worker_count(w);
    std::ostringstream log;
    const auto dir = std::filesystem::temp_directory_path() / ("fbsde_acceptance_" + std::to_string(payloads.size()));
    payloads.push_back(report_payload(run_tasks(s, dir.string(), log).report));
    std::filesystem::remove_all(dir);
  }
  set_worker_count(workers);
  bool same = true;
  for (const std::string& p : payloads) same = same && p == payloads.front();
  return {same, fmt("%zu runs (workers 1, 1, 4), payload %zu bytes, identical=%d", payloads.size(),
                    payloads.front().size(), same ? 1 : 0)};
}

}  // namespace

// Optional arguments select criteria by number; all run by default.
int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"complete-market oracle", complete_market_oracle},
      {"optimality sampling", optimality_sampling},
      {"orthogonality", orthogonality},
      {"density identity", density_identity},
      {"integration-by-parts identity", integration_by_parts},
      {"Fenchel-Young and driver change", young_and_driver_change},
      {"cost of incompleteness", cost_of_incompleteness},
      {"recursive utility", recursive_utility},
      {"exponential example", exponential_example},
      {"determinism", determinism},
  };
  std::vector<bool> selected(criteria.size(), argc < 2);
  for (int a = 1; a < argc; ++a) {
    const int k = std::atoi(argv[a]);
    if (k >= 1 && k <= static_cast<int>(criteria.size())) selected[static_cast<std::size_t>(k - 1)] = true;
  }
  int failed = 0, ran = 0;
  for (std::size_t j = 0; j < criteria.size(); ++j) {
    if (!selected[j]) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[j].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %zu %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", j + 1, criteria[j].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
