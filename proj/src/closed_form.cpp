#include "fbsde/closed_form.hpp"

#include <algorithm>
#include <cmath>

#include "fbsde/parallel.hpp"
#include "fbsde/regression.hpp"

namespace fbsde {

namespace {

RegressionBasis basis_of(const Numerics& n) {
  RegressionBasis b;
  b.degree = n.basis_degree;
  b.ridge = n.ridge;
  return b;
}

std::vector<double> discount_nodes(double beta, const TimeGrid& grid) {
  std::vector<double> D(grid.times.size());
  for (std::size_t i = 0; i < D.size(); ++i) D[i] = std::exp(-beta * grid.times[i]);
  return D;
}

double sum_sq(const std::vector<double>& v, std::size_t from = 0) {
  double s = 0.0;
  for (std::size_t k = from; k < v.size(); ++k) s += v[k] * v[k];
  return s;
}

double rms(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

void check_quadratic_market(const Scenario& sc) {
  if (sc.generator.kind != "quadratic_discount")
    throw Error(ErrorCode::unsupported, "closed form needs the quadratic_discount generator");
}

void mark_closed_form(FBSDESolution& sol) {
  sol.iterations = 0;
  sol.converged = true;
  sol.status = "closed-form";
}

}  // namespace

QuadraticParams quadratic_params(const Scenario& sc) {
  check_quadratic_market(sc);
  QuadraticParams q;
  q.beta = sc.generator.beta;
  q.gamma = sc.generator.gamma;
  q.theta = sc.market.theta_full();
  if (!(q.gamma > 0.0) || q.beta < 0.0) throw Error(ErrorCode::invalid_parameters, "need gamma > 0 and beta >= 0");
  return q;
}

double discount_weight(double beta, double t0, double t1) {
  if (beta == 0.0) return t1 - t0;
  return (std::exp(-beta * t0) - std::exp(-beta * t1)) / beta;
}

CompleteQuadratic solve_complete_quadratic(const Scenario& sc) {
  const QuadraticParams q = quadratic_params(sc);
  if (sc.market.n != sc.market.d) throw Error(ErrorCode::unsupported, "complete closed form needs n == d");
  CompleteQuadratic out{make_problem(sc, Dynamics::market), {}};
  const Problem& pb = out.problem;
  const PathEnsemble& paths = pb.paths;
  const TimeGrid& grid = paths.grid();
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d();
  const double x = pb.x0, T = grid.horizon, g = q.gamma;
  const double th2 = sum_sq(q.theta);
  const std::vector<double> D = discount_nodes(q.beta, grid);
  const double DT = D.back();

  // Running premium A_i = int_0^t_i D gamma |theta|^2 / 2 with exact weights.
  std::vector<double> A(static_cast<std::size_t>(N) + 1, 0.0);
  for (int i = 0; i < N; ++i)
    A[static_cast<std::size_t>(i) + 1] =
        A[static_cast<std::size_t>(i)] + discount_weight(q.beta, grid.t(i), grid.t(i + 1)) * g * th2 / 2.0;

  const int comp = sc.claim.component;
  const double ef = claim_expectation(sc.claim, -q.theta[static_cast<std::size_t>(comp)] * T, T);
  out.C = DT * (x + ef) + A.back();

  // I_i = sum_{j<i} D_j gamma theta . dB_j, path-wise.
  ProcessPath I(np, N, 1, Timing::adapted);
  for (int i = 0; i < N; ++i) {
    double* cur = I.slice(i);
    double* nxt = I.slice(i + 1);
    for (std::size_t p = 0; p < np; ++p) nxt[p] = cur[p];
    for (int k = 0; k < d; ++k) {
      const double c = D[static_cast<std::size_t>(i)] * g * q.theta[static_cast<std::size_t>(k)];
      const double* dw = paths.dW(i, k);
      for (std::size_t p = 0; p < np; ++p) nxt[p] += c * dw[p];
    }
  }

  std::vector<double> qc(np), xt(np);
  for (std::size_t p = 0; p < np; ++p) {
    qc[p] = DT * (x + pb.terminal[p]) + A.back() - I(p, N);
    xt[p] = (out.C - A.back() + I(p, N)) / DT - pb.terminal[p];
  }
  const MeanStat cs = mean_stat(qc);
  out.C_mc = cs.mean;
  out.C_mc_se = cs.se;
  const MeanStat bs = mean_stat(xt);
  out.budget_mean = bs.mean;
  out.budget_se = bs.se;

  // X_T = const + I_T / D_T - F: the stochastic integral is known, so only F
  // needs the regression representation.
  const RegressionBasis basis = basis_of(sc.numerics);
  StateFeatures feats(paths);
  if (!pb.claim_level.empty()) feats.add(pb.claim_level);
  const Representation rep = martingale_representation(pb.terminal, feats, basis);
  out.representation_rms = rep.residual_rms;

  FBSDESolution& sol = out.solution;
  sol.x0 = x;
  sol.pi_star = ProcessPath(np, N, d, Timing::predictable);
  sol.Z = ProcessPath(np, N, d, Timing::predictable);
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < d; ++k) {
      const double th = q.theta[static_cast<std::size_t>(k)];
      const double c = g * th * D[static_cast<std::size_t>(i)] / DT;
      const double* zf = rep.Z.slice(i, k);
      double* pi = sol.pi_star.slice(i, k);
      double* z = sol.Z.slice(i, k);
      for (std::size_t p = 0; p < np; ++p) {
        pi[p] = c - zf[p];
        z[p] = g * th - pi[p];
      }
    }
  sol.X = forward_wealth(x, &sol.pi_star, paths);
  // X + Y = (C - A_t + I_t) / D_t.
  sol.Y = ProcessPath(np, N, 1, Timing::adapted);
  for (int i = 0; i <= N; ++i) {
    const double di = D[static_cast<std::size_t>(i)], ai = A[static_cast<std::size_t>(i)];
    for (std::size_t p = 0; p < np; ++p) sol.Y(p, i) = (out.C - ai + I(p, i)) / di - sol.X(p, i);
  }
  sol.U = ProcessPath(np, N, 1, Timing::adapted, q.beta * T);
  sol.V = ProcessPath(np, N, d, Timing::predictable);
  sol.y0 = out.C - x;
  sol.y0_se = 0.0;
  out.utility = out.C;
  fill_optimal_coefficients(pb.g, sol, paths);
  fill_solution_residuals(sol, paths);
  sol.terminal_residual_rms = bsde_residual(pb.g, pb.terminal, paths, sol.X, sol.Y, sol.Z, &sol.pi_star).rms;
  mark_closed_form(sol);
  return out;
}

namespace {

struct ValueSolve {
  ProcessPath Gamma;  // predictable, dim d, with the known hat integral added back
  std::vector<double> A;
  std::vector<double> D;
  double value0 = 0.0, value0_se = 0.0;
  double penalty = 0.0, penalty_se = 0.0;
  double complete = 0.0, complete_se = 0.0;
  double representation_rms = 0.0;
};

// Value process L with
//   L_T = D_T (F + x) + int D gamma |theta_hat|^2 / 2 dt - int gamma theta_hat (D - D_T) . dB_hat.
// The last integral is known, so the regression runs on Ubar = L + that
// integral and the hat coefficient is corrected exactly afterwards:
//   Ubar_i = E_i Ubar_{i+1} - |Gamma_tilde_i|^2 / (2 gamma D_i) dt.
ValueSolve solve_value_process(const Problem& pb, double x, double beta, double gamma, std::span<const double> theta_hat,
                           const RegressionBasis& basis) {
  const PathEnsemble& paths = pb.paths;
  const std::vector<double>& F = pb.terminal;
  const TimeGrid& grid = paths.grid();
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d(), n = paths.n();
  ValueSolve s;
  s.D = discount_nodes(beta, grid);
  const double DT = s.D.back();
  double th2 = 0.0;
  for (double t : theta_hat) th2 += t * t;
  s.A.assign(static_cast<std::size_t>(N) + 1, 0.0);
  for (int i = 0; i < N; ++i)
    s.A[static_cast<std::size_t>(i) + 1] =
        s.A[static_cast<std::size_t>(i)] + discount_weight(beta, grid.t(i), grid.t(i + 1)) * gamma * th2 / 2.0;

  std::vector<double> ub(np), terminal(np), e(np), work(np), pen(np, 0.0);
  for (std::size_t p = 0; p < np; ++p) ub[p] = terminal[p] = DT * (F[p] + x) + s.A.back();
  s.Gamma = ProcessPath(np, N, d, Timing::predictable);
  StateFeatures feats(paths);
  if (!pb.claim_level.empty()) feats.add(pb.claim_level);
  for (int i = N - 1; i >= 0; --i) {
    const double dt = grid.dt(i), Di = s.D[static_cast<std::size_t>(i)];
    Projector P(feats.at(i), np, basis);
    P.project(ub.data(), e.data());
    for (int k = 0; k < d; ++k) {
      const double* dw = paths.dW(i, k);
      for (std::size_t p = 0; p < np; ++p) work[p] = (ub[p] - e[p]) * dw[p];
      double* G = s.Gamma.slice(i, k);
      P.project(work.data(), G);
      for (std::size_t p = 0; p < np; ++p) G[p] /= dt;
    }
    for (std::size_t p = 0; p < np; ++p) {
      double gt = 0.0;
      for (int k = n; k < d; ++k) gt += s.Gamma(p, i, k) * s.Gamma(p, i, k);
      const double drift = gt / (2.0 * gamma * Di) * dt;
      ub[p] = e[p] - drift;
      pen[p] += drift;
    }
  }
  s.value0 = mean_stat(ub).mean;

  // Residual of the representation, on Ubar before the hat correction.
  std::vector<double> res(np), q(np);
  for (std::size_t p = 0; p < np; ++p) {
    double r = terminal[p] - s.value0 - pen[p];
    for (int i = 0; i < N; ++i)
      for (int k = 0; k < d; ++k) r -= s.Gamma(p, i, k) * paths.dW(i, k)[p];
    res[p] = r;
    q[p] = terminal[p] - pen[p];
  }
  s.representation_rms = rms(res);
  s.value0_se = mean_stat(q).se;
  const MeanStat ps = mean_stat(pen);
  s.penalty = ps.mean;
  s.penalty_se = ps.se;
  const MeanStat cs = mean_stat(terminal);
  s.complete = cs.mean;
  s.complete_se = cs.se;

  for (int i = 0; i < N; ++i)
    for (int k = 0; k < n; ++k) {
      const double c = gamma * theta_hat[static_cast<std::size_t>(k)] * (s.D[static_cast<std::size_t>(i)] - DT);
      double* G = s.Gamma.slice(i, k);
      for (std::size_t p = 0; p < np; ++p) G[p] -= c;
    }
  return s;
}

}  // namespace

IncompleteQuadratic solve_incomplete_quadratic(const Scenario& sc) {
  const QuadraticParams q = quadratic_params(sc);
  if (sc.market.n >= sc.market.d) throw Error(ErrorCode::unsupported, "incomplete closed form needs n < d");
  IncompleteQuadratic out{make_problem(sc, Dynamics::market), {}};
  const Problem& pb = out.problem;
  const PathEnsemble& paths = pb.paths;
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d(), n = paths.n();
  const double x = pb.x0, g = q.gamma, T = paths.grid().horizon;
  const std::vector<double>& th = sc.market.theta_hat;

  ValueSolve us = solve_value_process(pb, x, q.beta, g, th, basis_of(sc.numerics));
  out.utility = us.value0;
  out.utility_se = us.value0_se;
  out.penalty = us.penalty;
  out.penalty_se = us.penalty_se;
  out.complete_value = us.complete;
  out.complete_value_se = us.complete_se;
  out.representation_rms = us.representation_rms;
  const std::vector<double>& D = us.D;
  const double DT = D.back();

  // X + Y = (1/D_t) [L_0 - A_t + int |Gamma_tilde|^2/(2 gamma D) ds + int D gamma theta_hat dB_hat
  //                  + int Gamma_tilde dW_tilde].
  ProcessPath S(np, N, 1, Timing::adapted);
  {
    std::vector<double> acc(np, us.value0);
    for (int i = 0; i <= N; ++i) {
      const double Di = D[static_cast<std::size_t>(i)], Ai = us.A[static_cast<std::size_t>(i)];
      for (std::size_t p = 0; p < np; ++p) S(p, i) = (acc[p] - Ai) / Di;
      if (i == N) break;
      const double dt = paths.grid().dt(i);
      for (std::size_t p = 0; p < np; ++p) {
        double a = 0.0;
        for (int k = 0; k < n; ++k) a += Di * g * th[static_cast<std::size_t>(k)] * paths.dW(i, k)[p];
        for (int k = n; k < d; ++k) {
          const double G = us.Gamma(p, i, k);
          a += G * G / (2.0 * g * Di) * dt + G * paths.dW(i, k)[p];
        }
        acc[p] += a;
      }
    }
  }

  auto assemble = [&](bool terminal_discount) {
    FBSDESolution sol;
    sol.x0 = x;
    sol.pi_star = ProcessPath(np, N, n, Timing::predictable);
    sol.Z = ProcessPath(np, N, d, Timing::predictable);
    sol.V = ProcessPath(np, N, d, Timing::predictable);
    for (int i = 0; i < N; ++i) {
      const double Di = D[static_cast<std::size_t>(i)];
      const double norm = terminal_discount ? DT : Di;
      for (int k = 0; k < n; ++k) {
        const double gt = g * th[static_cast<std::size_t>(k)];
        for (std::size_t p = 0; p < np; ++p) {
          const double pi = gt - us.Gamma(p, i, k) / norm;
          sol.pi_star(p, i, k) = pi;
          sol.Z(p, i, k) = gt - pi;
        }
      }
      for (int k = n; k < d; ++k)
        for (std::size_t p = 0; p < np; ++p) {
          const double z = us.Gamma(p, i, k) / Di;
          sol.Z(p, i, k) = z;
          sol.V(p, i, k) = -z / g;
        }
    }
    sol.X = forward_wealth(x, &sol.pi_star, paths);
    sol.Y = ProcessPath(np, N, 1, Timing::adapted);
    for (int i = 0; i <= N; ++i)
      for (std::size_t p = 0; p < np; ++p) sol.Y(p, i) = S(p, i) - sol.X(p, i);
    return sol;
  };

  FBSDESolution alt = assemble(false);
  out.residual_running_discount =
      bsde_residual(pb.g, pb.terminal, paths, alt.X, alt.Y, alt.Z, &alt.pi_star).rms;

  FBSDESolution& sol = out.solution;
  sol = assemble(true);
  out.residual_terminal_discount =
      bsde_residual(pb.g, pb.terminal, paths, sol.X, sol.Y, sol.Z, &sol.pi_star).rms;
  sol.terminal_residual_rms = out.residual_terminal_discount;

  // U_t = beta T + int_0^t (|c_tilde|^2 / 2 ds + c_tilde dW_tilde) with c_tilde = Z_tilde / gamma.
  sol.U = ProcessPath(np, N, 1, Timing::adapted, q.beta * T);
  for (int i = 0; i < N; ++i) {
    const double dt = paths.grid().dt(i);
    for (std::size_t p = 0; p < np; ++p) {
      double a = 0.0;
      for (int k = n; k < d; ++k) {
        const double c = sol.Z(p, i, k) / g;
        a += 0.5 * c * c * dt + c * paths.dW(i, k)[p];
      }
      sol.U(p, i + 1) = sol.U(p, i) + a;
    }
  }
  sol.y0 = out.utility - x;
  sol.y0_se = out.utility_se;
  fill_optimal_coefficients(pb.g, sol, paths);
  fill_solution_residuals(sol, paths);
  mark_closed_form(sol);
  return out;
}

PriceReport indifference_prices(const Scenario& sc) {
  const QuadraticParams q = quadratic_params(sc);
  PriceReport r;
  const double T = sc.market.horizon;
  r.discount_T = std::exp(-q.beta * T);
  const double DT = r.discount_T;

  // U(F) with the untransformed generator and no trading under P.
  const Problem raw = make_problem(sc, Dynamics::raw);
  BsdeOptions bo;
  bo.basis = basis_of(sc.numerics);
  const StrategyUtility uf = utility_of_strategy(raw.g, raw.terminal, raw.paths, nullptr, 0.0, bo, raw.features());
  r.utility_claim = uf.value;
  r.utility_claim_se = uf.se;

  // Complete-market counterpart with the full price of risk, on the same draws.
  const PathEnsemble& paths = raw.paths;
  const std::vector<double> ff = evaluate_claim(sc.claim, paths, q.theta);
  double prem = 0.0;
  for (int i = 0; i < paths.n_steps(); ++i)
    prem += discount_weight(q.beta, paths.grid().t(i), paths.grid().t(i + 1)) * q.gamma * sum_sq(q.theta) / 2.0;
  std::vector<double> c0(ff.size());
  for (std::size_t p = 0; p < ff.size(); ++p) c0[p] = DT * ff[p] + prem;
  const MeanStat cs = mean_stat(c0);
  r.complete_value = cs.mean;
  r.complete_value_se = cs.se;

  if (sc.market.n == sc.market.d) {
    r.incomplete_value = r.complete_value;
    r.incomplete_value_se = r.complete_value_se;
  } else {
    const Problem mk = make_problem(sc, Dynamics::market);
    ValueSolve us = solve_value_process(mk, 0.0, q.beta, q.gamma, sc.market.theta_hat, basis_of(sc.numerics));
    r.incomplete_value = us.value0;
    r.incomplete_value_se = us.value0_se;
    r.penalty = us.penalty;
    r.penalty_se = us.penalty_se;
  }
  r.x_star = (r.utility_claim - r.complete_value) / DT;
  r.x_star_se = std::hypot(r.utility_claim_se, r.complete_value_se) / DT;
  r.y_star = (r.utility_claim - r.incomplete_value) / DT;
  r.y_star_se = std::hypot(r.utility_claim_se, r.incomplete_value_se) / DT;
  r.cost = r.y_star - r.x_star;
  r.cost_se = std::hypot(r.complete_value_se, r.incomplete_value_se) / DT;
  r.cost_se_paired = r.penalty_se / DT;
  return r;
}

std::vector<double> integrate_recursive_ode(double rate, double level, double power, double terminal,
                                            const TimeGrid& grid) {
  auto f = [&](double phi) {
    if (!(phi > 0.0) || !std::isfinite(phi))
      throw Error(ErrorCode::domain_violation, "recursive utility level left (0, inf)");
    return rate * (phi - level * std::pow(phi, power));
  };
  const int N = grid.n_steps;
  std::vector<double> phi(static_cast<std::size_t>(N) + 1);
  phi[static_cast<std::size_t>(N)] = terminal;
  f(terminal);
  for (int i = N - 1; i >= 0; --i) {
    const double h = -grid.dt(i);
    const double y = phi[static_cast<std::size_t>(i) + 1];
    const double k1 = f(y);
    const double k2 = f(y + 0.5 * h * k1);
    const double k3 = f(y + 0.5 * h * k2);
    const double k4 = f(y + h * k3);
    phi[static_cast<std::size_t>(i)] = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    f(phi[static_cast<std::size_t>(i)]);
  }
  return phi;
}

RecursiveUtility solve_recursive_utility(const Scenario& sc) {
  if (sc.generator.kind != "recursive_kp")
    throw Error(ErrorCode::unsupported, "recursive closed form needs the recursive_kp generator");
  if (sc.market.n != sc.market.d) throw Error(ErrorCode::unsupported, "recursive closed form needs n == d");
  for (double t : sc.market.theta_hat)
    if (t != 0.0) throw Error(ErrorCode::unsupported, "recursive closed form needs a zero price of risk");
  RecursiveUtility out{make_problem(sc, Dynamics::raw), {}, {}};
  const Problem& pb = out.problem;
  const PathEnsemble& paths = pb.paths;
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d();
  const Generator& g = pb.g;

  StateFeatures feats(paths);
  if (!pb.claim_level.empty()) feats.add(pb.claim_level);
  const Representation rep = martingale_representation(pb.terminal, feats, basis_of(sc.numerics));
  out.representation_rms = rep.residual_rms;
  out.representation_max = rep.residual_max;
  out.phi = integrate_recursive_ode(g.recursive_rate(), g.recursive_level(), g.recursive_power(),
                                    rep.mean + pb.x0, paths.grid());

  FBSDESolution& sol = out.solution;
  sol.x0 = pb.x0;
  sol.Z = rep.Z;
  sol.pi_star = ProcessPath(np, N, d, Timing::predictable);
  for (std::size_t j = 0; j < sol.Z.data().size(); ++j) sol.pi_star.data()[j] = -sol.Z.data()[j];
  sol.X = forward_wealth(pb.x0, &sol.pi_star, paths);
  // Y_t = F - (phi_T - phi_t) - int_t^T Z dW.
  sol.Y = ProcessPath(np, N, 1, Timing::adapted);
  {
    std::vector<double> tail(np, 0.0);
    for (int i = N; i >= 0; --i) {
      const double drop = out.phi[static_cast<std::size_t>(N)] - out.phi[static_cast<std::size_t>(i)];
      for (std::size_t p = 0; p < np; ++p) sol.Y(p, i) = pb.terminal[p] - drop - tail[p];
      if (i == 0) break;
      for (int k = 0; k < d; ++k) {
        const double* z = sol.Z.slice(i - 1, k);
        const double* dw = paths.dW(i - 1, k);
        for (std::size_t p = 0; p < np; ++p) tail[p] += z[p] * dw[p];
      }
    }
  }
  double cmax = 0.0;
  for (int i = 0; i <= N; ++i)
    for (std::size_t p = 0; p < np; ++p)
      cmax = std::max(cmax, std::abs(sol.X(p, i) + sol.Y(p, i) - out.phi[static_cast<std::size_t>(i)]));
  out.consistency_max = cmax;

  // U_t = int_0^T d_y g(phi) ds, V = 0.
  double u = 0.0;
  const std::vector<double> zero(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < N; ++i) u += g.dy(out.phi[static_cast<std::size_t>(i)], zero) * paths.grid().dt(i);
  sol.U = ProcessPath(np, N, 1, Timing::adapted, u);
  sol.V = ProcessPath(np, N, d, Timing::predictable);
  sol.y0 = mean_stat(sol.Y.slice(0), np).mean;
  sol.y0_se = mean_stat(pb.terminal.data(), np).se;
  fill_optimal_coefficients(g, sol, paths);
  fill_solution_residuals(sol, paths);
  sol.terminal_residual_rms = bsde_residual(g, pb.terminal, paths, sol.X, sol.Y, sol.Z, &sol.pi_star).rms;
  mark_closed_form(sol);
  return out;
}

ExponentialExample solve_exponential_example(const Scenario& sc) {
  if (sc.generator.kind != "exp_quadratic")
    throw Error(ErrorCode::unsupported, "exponential example needs the exp_quadratic generator");
  if (sc.market.d != 2 || sc.market.n != 1) throw Error(ErrorCode::unsupported, "exponential example needs d = 2, n = 1");
  ExponentialExample out{make_problem(sc, Dynamics::market), {}};
  const Problem& pb = out.problem;
  const PathEnsemble& paths = pb.paths;
  const TimeGrid& grid = paths.grid();
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps();
  const double th = sc.market.theta_hat[0], th2 = th * th, x = pb.x0, T = grid.horizon;
  const RegressionBasis basis = basis_of(sc.numerics);

  // Step 1: dY_hat = (-theta^2 / 2 + |Z_hat^2|^2 / 2) dt - Z_hat . dB, Y_hat_T = F.
  ProcessPath Yh(np, N, 1, Timing::adapted);
  ProcessPath Zh(np, N, 2, Timing::predictable);
  std::copy(pb.terminal.begin(), pb.terminal.end(), Yh.slice(N));
  std::vector<double> e(np), work(np), q(pb.terminal);
  StateFeatures feats(paths);
  if (!pb.claim_level.empty()) feats.add(pb.claim_level);
  for (int i = N - 1; i >= 0; --i) {
    const double dt = grid.dt(i);
    Projector P(feats.at(i), np, basis);
    const double* yn = Yh.slice(i + 1);
    P.project(yn, e.data());
    for (int k = 0; k < 2; ++k) {
      const double* dw = paths.dW(i, k);
      for (std::size_t p = 0; p < np; ++p) work[p] = (yn[p] - e[p]) * dw[p];
      double* z = Zh.slice(i, k);
      P.project(work.data(), z);
      for (std::size_t p = 0; p < np; ++p) z[p] = -z[p] / dt;
    }
    double* yi = Yh.slice(i);
    const double* z2 = Zh.slice(i, 1);
    for (std::size_t p = 0; p < np; ++p) {
      const double drift = (-0.5 * th2 + 0.5 * z2[p] * z2[p]) * dt;
      yi[p] = e[p] - drift;
      q[p] -= drift;
    }
  }
  out.y_hat0 = mean_stat(Yh.slice(0), np).mean;
  {
    double ss = 0.0, mx = 0.0;
    for (int i = 0; i < N; ++i) {
      const double* z2 = Zh.slice(i, 1);
      for (std::size_t p = 0; p < np; ++p) {
        ss += z2[p] * z2[p];
        mx = std::max(mx, std::abs(z2[p]));
      }
    }
    out.z_hat2_rms = std::sqrt(ss / (static_cast<double>(np) * N));
    out.z_hat2_max = mx;
    std::vector<double> res(np);
    for (std::size_t p = 0; p < np; ++p) {
      double r = q[p] - out.y_hat0;
      for (int i = 0; i < N; ++i)
        for (int k = 0; k < 2; ++k) r += Zh(p, i, k) * paths.dW(i, k)[p];
      res[p] = r;
    }
    out.representation_rms = rms(res);
  }

  FBSDESolution& sol = out.solution;
  sol.x0 = x;
  // Step 2: X = x + int (theta + Z_hat^1) dB^1.
  sol.pi_star = ProcessPath(np, N, 1, Timing::predictable);
  for (int i = 0; i < N; ++i) {
    const double* z1 = Zh.slice(i, 0);
    double* pi = sol.pi_star.slice(i);
    for (std::size_t p = 0; p < np; ++p) pi[p] = th + z1[p];
  }
  sol.X = forward_wealth(x, &sol.pi_star, paths);

  // Step 3: X_tilde, the transform E = exp(-X_tilde) + (T - t), S = -log E,
  // and the assembly of (Y, Z, U, V).
  sol.Y = ProcessPath(np, N, 1, Timing::adapted);
  sol.U = ProcessPath(np, N, 1, Timing::adapted);
  sol.Z = ProcessPath(np, N, 2, Timing::predictable);
  sol.V = ProcessPath(np, N, 2, Timing::predictable);
  ProcessPath S(np, N, 1, Timing::adapted);
  {
    std::vector<double> xt(np, x + out.y_hat0);
    for (int i = 0; i <= N; ++i) {
      const double rem = T - grid.t(i);
      for (std::size_t p = 0; p < np; ++p) {
        const double ex = std::exp(-xt[p]);
        const double E = ex + rem;
        const double s = -std::log(E);
        S(p, i) = s;
        sol.Y(p, i) = s - sol.X(p, i);
        sol.U(p, i) = sol.Y(p, i) - Yh(p, i);
        if (i == N) continue;
        const double r = ex / E;
        const double zh1 = Zh(p, i, 0), zh2 = Zh(p, i, 1);
        const double zt1 = r * th, zt2 = -r * zh2;
        sol.Z(p, i, 0) = zt1 - th - zh1;
        sol.Z(p, i, 1) = zt2;
        sol.V(p, i, 0) = zt1 - th;
        sol.V(p, i, 1) = zt2 + zh2;
      }
      if (i == N) break;
      const double dt = grid.dt(i);
      const double* dw1 = paths.dW(i, 0);
      const double* dw2 = paths.dW(i, 1);
      const double* z2 = Zh.slice(i, 1);
      for (std::size_t p = 0; p < np; ++p)
        xt[p] += 0.5 * (th2 + z2[p] * z2[p]) * dt + th * (dw1[p] - th * dt) - z2[p] * dw2[p];
    }
  }

  // Accumulated discrete residuals of both backward equations.
  std::vector<double> ry(np), ru(np);
  for (std::size_t p = 0; p < np; ++p) {
    double a = pb.terminal[p] - sol.Y(p, 0), b = -sol.U(p, 0);
    for (int i = 0; i < N; ++i) {
      const double dt = grid.dt(i);
      const double v1 = sol.V(p, i, 0), v2 = sol.V(p, i, 1), z2 = sol.Z(p, i, 1);
      const double gy = std::exp(S(p, i)) + 0.5 * (th + v1) * (th + v1) + 0.5 * z2 * z2 - (th + v1) * th;
      const double gu = std::exp(S(p, i)) + 0.5 * v1 * v1 - 0.5 * v2 * v2 + v2 * z2;
      a -= gy * dt;
      b -= gu * dt;
      for (int k = 0; k < 2; ++k) {
        a -= sol.Z(p, i, k) * paths.dW(i, k)[p];
        b -= sol.V(p, i, k) * paths.dW(i, k)[p];
      }
    }
    ry[p] = a;
    ru[p] = b;
  }
  out.residual_y_rms = rms(ry);
  out.residual_u_rms = rms(ru);
  out.residual_rms = std::max(out.residual_y_rms, out.residual_u_rms);
  out.threshold = 5.0 * grid.dt(0);
  sol.y0 = mean_stat(sol.Y.slice(0), np).mean;
  sol.y0_se = 0.0;
  sol.terminal_residual_rms = out.residual_y_rms;
  fill_optimal_coefficients(pb.g, sol, paths);
  fill_solution_residuals(sol, paths);
  mark_closed_form(sol);
  return out;
}

}  // namespace fbsde
