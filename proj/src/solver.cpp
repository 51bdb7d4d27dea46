#include "fbsde/solver.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "fbsde/engine.hpp"
#include "fbsde/parallel.hpp"

namespace fbsde {

namespace {

std::vector<const double*> node_features(const PathEnsemble& paths, int i, const ProcessPath* X,
                                         const std::vector<const ProcessPath*>& extra) {
  std::vector<const double*> f;
  for (int k = 0; k < paths.d(); ++k) f.push_back(paths.W(i, k));
  if (X) f.push_back(X->slice(i));
  for (const ProcessPath* e : extra)
    for (int k = 0; k < e->dim(); ++k) f.push_back(e->slice(i, k));
  return f;
}

void check_adapted_scalar(const ProcessPath& x, const PathEnsemble& paths, const char* what) {
  if (x.timing() != Timing::adapted || x.dim() != 1 || x.n_paths() != paths.n_paths() ||
      x.n_steps() != paths.n_steps())
    throw Error(ErrorCode::invalid_argument, std::string(what) + " must be an adapted scalar on the ensemble grid");
}

void check_predictable(const ProcessPath& x, const PathEnsemble& paths, int dim, const char* what) {
  if (x.timing() != Timing::predictable || x.dim() != dim || x.n_paths() != paths.n_paths() ||
      x.n_steps() != paths.n_steps())
    throw Error(ErrorCode::invalid_argument,
                std::string(what) + " must be predictable with " + std::to_string(dim) + " components");
}

double max_abs_diff(const ProcessPath& a, const ProcessPath& b) {
  const auto& x = a.data();
  const auto& y = b.data();
  double m = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) m = std::max(m, std::abs(x[j] - y[j]));
  return m;
}

void damp(ProcessPath& state, const ProcessPath& fresh, double lambda) {
  auto& x = state.data();
  const auto& y = fresh.data();
  for (std::size_t j = 0; j < x.size(); ++j) x[j] += lambda * (y[j] - x[j]);
}

// pi = pointwise_optimizer(X + Y, Z, Vhat) path-wise.
void strategy_from_state(const Generator& g, const ProcessPath& X, const ProcessPath& Y, const ProcessPath& Z,
                         const ProcessPath& V, ProcessPath& pi) {
  const int d = Z.dim(), n = pi.dim();
  parallel_chunks(X.n_paths(), [&](std::size_t, std::size_t lo, std::size_t hi) {
    std::array<double, kMaxDim> z{}, v{}, out{};
    for (int i = 0; i < pi.n_steps(); ++i)
      for (std::size_t p = lo; p < hi; ++p) {
        for (int k = 0; k < d; ++k) z[static_cast<std::size_t>(k)] = Z(p, i, k);
        for (int k = 0; k < n; ++k) v[static_cast<std::size_t>(k)] = V(p, i, k);
        try {
          g.pointwise_optimizer(X(p, i) + Y(p, i), std::span<const double>(z.data(), static_cast<std::size_t>(d)),
                    std::span<const double>(v.data(), static_cast<std::size_t>(n)),
                    std::span<double>(out.data(), static_cast<std::size_t>(n)));
        } catch (const Error& e) {
          throw Error(ErrorCode::optimizer_undefined,
                      "pointwise_optimizer failed at step " + std::to_string(i) + ": " + e.what());
        }
        for (int k = 0; k < n; ++k) pi(p, i, k) = out[static_cast<std::size_t>(k)];
      }
  });
}

}  // namespace

ProcessPath forward_wealth(double x0, const ProcessPath* pi, const PathEnsemble& paths) {
  const std::size_t np = paths.n_paths();
  ProcessPath X(np, paths.n_steps(), 1, Timing::adapted, x0);
  if (!pi) return X;
  if (pi->timing() != Timing::predictable || pi->dim() > paths.n() || pi->n_paths() != np ||
      pi->n_steps() != paths.n_steps())
    throw Error(ErrorCode::invalid_argument, "strategy must be predictable with at most n components");
  parallel_chunks(np, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (int i = 0; i < paths.n_steps(); ++i) {
      const double* cur = X.slice(i);
      double* next = X.slice(i + 1);
      for (std::size_t p = lo; p < hi; ++p) next[p] = cur[p];
      for (int k = 0; k < pi->dim(); ++k) {
        const double* h = pi->slice(i, k);
        const double* dw = paths.dW(i, k);
        for (std::size_t p = lo; p < hi; ++p) next[p] += h[p] * dw[p];
      }
    }
  });
  return X;
}

namespace {

void check_strategy(const ProcessPath* pi, const PathEnsemble& paths) {
  if (pi && (pi->timing() != Timing::predictable || pi->dim() > paths.n() || pi->n_paths() != paths.n_paths() ||
             pi->n_steps() != paths.n_steps()))
    throw Error(ErrorCode::invalid_argument, "strategy must be predictable with at most n components");
}

SubSolution start_bsde(std::span<const double> terminal, const PathEnsemble& paths) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps();
  if (terminal.size() != np) throw Error(ErrorCode::invalid_argument, "terminal values do not match the ensemble");
  for (double v : terminal)
    if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "terminal value is not finite");
  SubSolution s;
  s.Y = ProcessPath(np, N, 1, Timing::adapted);
  s.Z = ProcessPath(np, N, paths.d(), Timing::predictable);
  std::copy(terminal.begin(), terminal.end(), s.Y.slice(N));
  s.pathwise.assign(terminal.begin(), terminal.end());
  return s;
}

// Z_i from the projection, then Y_i = E_i[Y_{i+1}] - g(X_i + Y_i, Z_i + pi_i) dt by fixed point.
void bsde_step(const Projector& P, int i, const Generator& g, const PathEnsemble& paths, const ProcessPath* pi,
               const ProcessPath& X, const BsdeOptions& opts, SubSolution& s, std::vector<double>& ey,
               std::vector<double>& work) {
  const std::size_t np = paths.n_paths();
  const int d = paths.d(), npi = pi ? pi->dim() : 0;
  const double dt = paths.grid().dt(i);
  const double* yn = s.Y.slice(i + 1);
  P.project(yn, ey.data());
  for (int k = 0; k < d; ++k) {
    const double* dw = paths.dW(i, k);
    for (std::size_t p = 0; p < np; ++p) work[p] = (yn[p] - ey[p]) * dw[p];
    double* z = s.Z.slice(i, k);
    P.project(work.data(), z);
    for (std::size_t p = 0; p < np; ++p) z[p] /= dt;
  }
  double* yi = s.Y.slice(i);
  const double* xi = X.slice(i);
  parallel_chunks(np, [&](std::size_t, std::size_t lo, std::size_t hi) {
    std::array<double, kMaxDim> w{};
    const std::span<const double> ws(w.data(), static_cast<std::size_t>(d));
    for (std::size_t p = lo; p < hi; ++p) {
      for (int k = 0; k < d; ++k)
        w[static_cast<std::size_t>(k)] = s.Z(p, i, k) + (k < npi ? (*pi)(p, i, k) : 0.0);
      double y = ey[p];
      bool done = false;
      for (int it = 0; it < opts.inner_max_iter; ++it) {
        const double gv = g.value(xi[p] + y, ws);
        if (!std::isfinite(gv))
          throw Error(ErrorCode::domain_violation, "generator left its domain at step " + std::to_string(i));
        const double next = ey[p] - gv * dt;
        if (!std::isfinite(next)) break;
        const bool small = std::abs(next - y) <= opts.inner_tol * (1.0 + std::abs(next));
        y = next;
        if (small) {
          done = true;
          break;
        }
      }
      if (!done) throw Error(ErrorCode::bsde_diverged, "implicit step did not converge at step " + std::to_string(i));
      const double gv = g.value(xi[p] + y, ws);
      if (!std::isfinite(gv))
        throw Error(ErrorCode::domain_violation, "generator left its domain at step " + std::to_string(i));
      yi[p] = y;
      s.pathwise[p] -= gv * dt;
    }
  });
}

// K_{i+1} - K_i = Y_{i+1} - Y_i - g_i dt - Z_i . dW_i
void finish_bsde(const Generator& g, const PathEnsemble& paths, const ProcessPath* pi, const ProcessPath& X,
                 const BsdeOptions& opts, SubSolution& s) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d(), npi = pi ? pi->dim() : 0;
  s.y0 = mean_stat(s.Y.slice(0), np).mean;
  s.y0_se = mean_stat(s.pathwise).se;
  if (opts.store_k) s.K = ProcessPath(np, N, 1, Timing::adapted);
  std::vector<double> kT(np);
  const std::size_t nc = chunk_count(np);
  std::vector<double> cmin(nc, std::numeric_limits<double>::infinity()),
      cmax(nc, -std::numeric_limits<double>::infinity());
  parallel_chunks(np, [&](std::size_t c, std::size_t lo, std::size_t hi) {
    std::array<double, kMaxDim> w{};
    const std::span<const double> ws(w.data(), static_cast<std::size_t>(d));
    for (std::size_t p = lo; p < hi; ++p) {
      double k = 0.0;
      for (int i = 0; i < N; ++i) {
        double zdw = 0.0;
        for (int j = 0; j < d; ++j) {
          const double z = s.Z(p, i, j);
          w[static_cast<std::size_t>(j)] = z + (j < npi ? (*pi)(p, i, j) : 0.0);
          zdw += z * paths.dW(i, j)[p];
        }
        const double gv = g.value(X(p, i) + s.Y(p, i), ws);
        const double inc = s.Y(p, i + 1) - s.Y(p, i) - gv * paths.grid().dt(i) - zdw;
        cmin[c] = std::min(cmin[c], inc);
        cmax[c] = std::max(cmax[c], inc);
        k += inc;
        if (opts.store_k) s.K(p, i + 1) = k;
      }
      kT[p] = k;
    }
  });
  MeanStat ks = mean_stat(kT);
  s.k_terminal_mean = ks.mean;
  s.k_terminal_se = ks.se;
  s.k_terminal_rms =
      std::sqrt(ks.variance * static_cast<double>(np - 1) / static_cast<double>(np) + ks.mean * ks.mean);
  s.k_min_increment = *std::min_element(cmin.begin(), cmin.end());
  s.k_max_increment = *std::max_element(cmax.begin(), cmax.end());
}

// U = Ubar + P with P the running part of U_T and Ubar_T = 0; the known
// martingale part c_tilde . dW_tilde enters V exactly. On entry ubar holds
// Ubar_{i+1}, on exit Ubar_i.
void aux_step(const Projector& P, int i, const PathEnsemble& paths, const ProcessPath& b, const ProcessPath* ct,
              AuxSolution& out, std::vector<double>& ubar, std::vector<double>& eu, std::vector<double>& work) {
  const std::size_t np = paths.n_paths();
  const int d = paths.d(), n = paths.n();
  const double dt = paths.grid().dt(i);
  P.project(ubar.data(), eu.data());
  for (int k = 0; k < d; ++k) {
    const double* dw = paths.dW(i, k);
    for (std::size_t p = 0; p < np; ++p) work[p] = (ubar[p] - eu[p]) * dw[p];
    double* v = out.V.slice(i, k);
    P.project(work.data(), v);
    for (std::size_t p = 0; p < np; ++p) v[p] = -v[p] / dt;
    if (k >= n) {
      const double* c = ct->slice(i, k - n);
      for (std::size_t p = 0; p < np; ++p) v[p] -= c[p];
    }
  }
  parallel_chunks(np, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p) {
      double vh = 0.0, vt = 0.0, ct2 = 0.0;
      for (int k = 0; k < d; ++k) {
        const double v = out.V(p, i, k);
        (k < n ? vh : vt) += v * v;
      }
      for (int k = n; k < d; ++k) ct2 += (*ct)(p, i, k - n) * (*ct)(p, i, k - n);
      const double u = eu[p] + (b(p, i) + 0.5 * ct2) * dt + 0.5 * (vh - vt) * dt;
      if (!std::isfinite(u)) throw Error(ErrorCode::bsde_diverged, "auxiliary BSDE produced a non-finite value");
      ubar[p] = u;
    }
  });
  std::copy(ubar.begin(), ubar.end(), out.U.slice(i));
}

// Adds the running part to U (which holds Ubar) and computes the residual.
void finish_aux(const PathEnsemble& paths, const ProcessPath& b, const ProcessPath* ct, AuxSolution& out) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d(), n = paths.n();
  out.residual.assign(np, 0.0);
  parallel_chunks(np, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p) {
      double run = 0.0;
      double r = 0.0;
      for (int i = 0; i < N; ++i) {
        const double dt = paths.grid().dt(i);
        out.U(p, i) += run;
        double inc = b(p, i) * dt;
        for (int k = n; k < d; ++k) {
          const double c = (*ct)(p, i, k - n);
          inc += 0.5 * c * c * dt + c * paths.dW(i, k)[p];
        }
        run += inc;
        for (int k = 0; k < d; ++k) {
          const double v = out.V(p, i, k);
          r += (k < n ? 0.5 : -0.5) * v * v * dt + v * paths.dW(i, k)[p];
        }
      }
      out.U(p, N) += run;
      out.residual[p] = r + out.U(p, N) - out.U(p, 0);
    }
  });
  out.u0 = mean_stat(out.U.slice(0), np).mean;
  double ss = 0.0;
  for (double r : out.residual) ss += r * r;
  out.residual_rms = std::sqrt(ss / static_cast<double>(np));
}

AuxSolution start_aux(const PathEnsemble& paths) {
  AuxSolution out;
  out.U = ProcessPath(paths.n_paths(), paths.n_steps(), 1, Timing::adapted);
  out.V = ProcessPath(paths.n_paths(), paths.n_steps(), paths.d(), Timing::predictable);
  return out;
}

}  // namespace

SubSolution solve_bsde_fixed_strategy(const Generator& g, std::span<const double> terminal,
                                      const PathEnsemble& paths, const ProcessPath* pi, const ProcessPath& X,
                                      const BsdeOptions& opts, const std::vector<const ProcessPath*>& extra) {
  if (g.d() != paths.d()) throw Error(ErrorCode::invalid_argument, "generator dimension differs from the ensemble");
  check_adapted_scalar(X, paths, "wealth");
  check_strategy(pi, paths);
  SubSolution s = start_bsde(terminal, paths);
  std::vector<double> ey(paths.n_paths()), work(paths.n_paths());
  for (int i = paths.n_steps() - 1; i >= 0; --i) {
    Projector P(node_features(paths, i, &X, extra), paths.n_paths(), opts.basis);
    bsde_step(P, i, g, paths, pi, X, opts, s, ey, work);
  }
  finish_bsde(g, paths, pi, X, opts, s);
  return s;
}

AuxSolution solve_auxiliary_bsde(const ProcessPath& b, const ProcessPath* c_tilde, const PathEnsemble& paths,
                                 const RegressionBasis& basis, const std::vector<const ProcessPath*>& extra) {
  const int d = paths.d(), n = paths.n();
  check_predictable(b, paths, 1, "discount rate");
  if (c_tilde) check_predictable(*c_tilde, paths, d - n, "c_tilde");
  else if (d > n) throw Error(ErrorCode::invalid_argument, "c_tilde is required when n < d");
  AuxSolution out = start_aux(paths);
  std::vector<double> ubar(paths.n_paths(), 0.0), eu(paths.n_paths()), work(paths.n_paths());
  for (int i = paths.n_steps() - 1; i >= 0; --i) {
    Projector P(node_features(paths, i, nullptr, extra), paths.n_paths(), basis);
    aux_step(P, i, paths, b, c_tilde, out, ubar, eu, work);
  }
  finish_aux(paths, b, c_tilde, out);
  return out;
}

namespace {

// One Picard sweep: the strategy's BSDE and the auxiliary BSDE at the
// resulting gradients share each step's projection (same features).
struct Sweep {
  SubSolution sub;
  AuxSolution aux;
};

Sweep sweep(const Generator& g, std::span<const double> terminal, const PathEnsemble& paths, const ProcessPath& pi,
            const ProcessPath& X, const BsdeOptions& opts, const std::vector<const ProcessPath*>& extra) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d(), n = paths.n();
  Sweep sw{start_bsde(terminal, paths), start_aux(paths)};
  ProcessPath b(np, N, 1, Timing::predictable);
  ProcessPath ct(np, N, std::max(d - n, 1), Timing::predictable);
  std::vector<double> ey(np), work(np), ubar(np, 0.0);
  for (int i = N - 1; i >= 0; --i) {
    Projector P(node_features(paths, i, &X, extra), np, opts.basis);
    bsde_step(P, i, g, paths, &pi, X, opts, sw.sub, ey, work);
    parallel_chunks(np, [&](std::size_t, std::size_t lo, std::size_t hi) {
      std::array<double, kMaxDim> w{}, grad{};
      const std::span<const double> ws(w.data(), static_cast<std::size_t>(d));
      for (std::size_t p = lo; p < hi; ++p) {
        for (int k = 0; k < d; ++k) w[static_cast<std::size_t>(k)] = sw.sub.Z(p, i, k) + (k < n ? pi(p, i, k) : 0.0);
        const double s = X(p, i) + sw.sub.Y(p, i);
        b(p, i) = g.dy(s, ws);
        g.dz(s, ws, std::span<double>(grad.data(), static_cast<std::size_t>(d)));
        for (int k = n; k < d; ++k) ct(p, i, k - n) = grad[static_cast<std::size_t>(k)];
      }
    });
    aux_step(P, i, paths, b, d > n ? &ct : nullptr, sw.aux, ubar, ey, work);
  }
  finish_bsde(g, paths, &pi, X, opts, sw.sub);
  finish_aux(paths, b, d > n ? &ct : nullptr, sw.aux);
  return sw;
}

}  // namespace

SolverOptions solver_options(const Numerics& n) {
  SolverOptions o;
  o.bsde.basis.degree = n.basis_degree;
  o.bsde.basis.ridge = n.ridge;
  o.max_iter = n.picard_max_iter;
  o.damping = n.picard_damping;
  o.tol_y0 = n.tol_y0;
  o.tol_path = n.tol_path;
  return o;
}

void fill_optimal_coefficients(const Generator& g, FBSDESolution& sol, const PathEnsemble& paths) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d(), n = sol.pi_star.dim();
  sol.b_star = ProcessPath(np, N, 1, Timing::predictable);
  sol.c_star = ProcessPath(np, N, d, Timing::predictable);
  sol.a_star = ProcessPath(np, N, 1, Timing::predictable);
  std::vector<double> touch(chunk_count(np), 0.0);
  parallel_chunks(np, [&](std::size_t c, std::size_t lo, std::size_t hi) {
    std::array<double, kMaxDim> w{}, ph{};
    for (int i = 0; i < N; ++i)
      for (std::size_t p = lo; p < hi; ++p) {
        for (int k = 0; k < d; ++k)
          w[static_cast<std::size_t>(k)] = sol.Z(p, i, k) + (k < n ? sol.pi_star(p, i, k) : 0.0);
        for (int k = 0; k < n; ++k) ph[static_cast<std::size_t>(k)] = sol.pi_star(p, i, k);
        const double x = sol.X(p, i);
        OptimalCoefficients oc =
            extract_optimal_coefficients(g, x + sol.Y(p, i), std::span<const double>(w.data(), static_cast<std::size_t>(d)));
        sol.b_star(p, i) = oc.b;
        for (int k = 0; k < d; ++k) sol.c_star(p, i, k) = oc.c[static_cast<std::size_t>(k)];
        sol.a_star(p, i) = optimal_shift(oc, std::span<const double>(ph.data(), static_cast<std::size_t>(n)), x);
        touch[c] = std::max(touch[c], std::abs(oc.touching_residual));
      }
  });
  sol.touching_residual = *std::max_element(touch.begin(), touch.end());
}

void fill_solution_residuals(FBSDESolution& sol, const PathEnsemble& paths) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), n = sol.pi_star.dim();
  double eta = 0.0, fwd = 0.0;
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < n; ++k) {
      const double* c = sol.c_star.slice(i, k);
      const double* v = sol.V.slice(i, k);
      for (std::size_t p = 0; p < np; ++p) eta = std::max(eta, std::abs(c[p] - v[p]));
    }
  std::vector<double> acc(np, sol.x0);
  for (int i = 0; i <= N; ++i) {
    const double* x = sol.X.slice(i);
    for (std::size_t p = 0; p < np; ++p) fwd = std::max(fwd, std::abs(x[p] - acc[p]));
    if (i == N) break;
    for (int k = 0; k < n; ++k) {
      const double* pi = sol.pi_star.slice(i, k);
      const double* dw = paths.dW(i, k);
      for (std::size_t p = 0; p < np; ++p) acc[p] += pi[p] * dw[p];
    }
  }
  sol.optimizer_residual = eta;
  sol.forward_residual = fwd;
}

FBSDESolution picard_solve(const Generator& g, std::span<const double> terminal, const PathEnsemble& paths,
                           double x0, const SolverOptions& opts, const std::vector<const ProcessPath*>& extra) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d(), n = paths.n();
  if (terminal.size() != np) throw Error(ErrorCode::invalid_argument, "terminal values do not match the ensemble");
  if (!(opts.damping > 0.0 && opts.damping <= 1.0))
    throw Error(ErrorCode::invalid_argument, "damping must lie in (0, 1]");

  FBSDESolution sol;
  sol.x0 = x0;
  const double fmean = mean_stat(terminal.data(), np).mean;
  ProcessPath X = forward_wealth(x0, nullptr, paths);
  ProcessPath Y(np, N, 1, Timing::adapted, fmean);
  ProcessPath Z(np, N, d, Timing::predictable);
  ProcessPath U(np, N, 1, Timing::adapted);
  ProcessPath V(np, N, d, Timing::predictable);
  ProcessPath pi(np, N, n, Timing::predictable);

  int streak = 0;
  std::vector<double> dy0s;
  sol.status = "max-iterations";
  for (int it = 1; it <= opts.max_iter; ++it) {
    sol.iterations = it;
    strategy_from_state(g, X, Y, Z, V, pi);
    X = forward_wealth(x0, &pi, paths);
    Sweep sw = sweep(g, terminal, paths, pi, X, opts.bsde, extra);
    SubSolution& sub = sw.sub;
    AuxSolution& aux = sw.aux;

    const double dy0 = sub.y0 - Y(0, 0);
    const double change = std::max({max_abs_diff(sub.Y, Y), max_abs_diff(sub.Z, Z), max_abs_diff(aux.U, U),
                                    max_abs_diff(aux.V, V)});
    damp(Y, sub.Y, opts.damping);
    damp(Z, sub.Z, opts.damping);
    damp(U, aux.U, opts.damping);
    damp(V, aux.V, opts.damping);
    sol.y0_history.push_back(sub.y0);
    sol.path_change_history.push_back(change);
    dy0s.push_back(dy0);

    streak = (std::abs(dy0) < opts.tol_y0 && change < opts.tol_path) ? streak + 1 : 0;
    if (streak >= 3) {
      sol.converged = true;
      sol.status = "converged";
      break;
    }
    // Y_0 cycle: six alternating changes with non-decreasing amplitude.
    if (dy0s.size() >= 6) {
      bool cycle = true;
      for (std::size_t j = dy0s.size() - 5; j < dy0s.size(); ++j) {
        if (!(dy0s[j] * dy0s[j - 1] < 0.0) || std::abs(dy0s[j]) < std::abs(dy0s[j - 1]) ||
            std::abs(dy0s[j]) < opts.tol_y0)
          cycle = false;
      }
      if (cycle) {
        sol.status = "oscillation";
        break;
      }
    }
  }

  strategy_from_state(g, X, Y, Z, V, pi);
  sol.pi_star = std::move(pi);
  sol.X = forward_wealth(x0, &sol.pi_star, paths);
  SubSolution fin = solve_bsde_fixed_strategy(g, terminal, paths, &sol.pi_star, sol.X, opts.bsde, extra);
  sol.Y = std::move(fin.Y);
  sol.Z = std::move(fin.Z);
  sol.y0 = fin.y0;
  sol.y0_se = fin.y0_se;
  sol.terminal_residual_rms = fin.k_terminal_rms;
  sol.U = std::move(U);
  sol.V = std::move(V);
  fill_optimal_coefficients(g, sol, paths);

  fill_solution_residuals(sol, paths);
  return sol;
}

StrategyUtility utility_of_strategy(const Generator& g, std::span<const double> terminal, const PathEnsemble& paths,
                                    const ProcessPath* pi, double x0, const BsdeOptions& opts,
                                    const std::vector<const ProcessPath*>& extra) {
  ProcessPath X = forward_wealth(x0, pi, paths);
  SubSolution s = solve_bsde_fixed_strategy(g, terminal, paths, pi, X, opts, extra);
  StrategyUtility u;
  u.value = s.y0;
  u.utility = s.y0 + x0;
  u.se = s.y0_se;
  u.pathwise = std::move(s.pathwise);
  return u;
}

SystemResidual bsde_residual(const Generator& g, std::span<const double> terminal, const PathEnsemble& paths,
                             const ProcessPath& X, const ProcessPath& Y, const ProcessPath& Z,
                             const ProcessPath* pi) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d();
  const int npi = pi ? pi->dim() : 0;
  std::vector<double> r(np), m(np);
  parallel_chunks(np, [&](std::size_t, std::size_t lo, std::size_t hi) {
    std::array<double, kMaxDim> w{};
    const std::span<const double> ws(w.data(), static_cast<std::size_t>(d));
    for (std::size_t p = lo; p < hi; ++p) {
      double e = terminal[p] - Y(p, 0);
      for (int i = 0; i < N; ++i) {
        for (int k = 0; k < d; ++k) {
          w[static_cast<std::size_t>(k)] = Z(p, i, k) + (k < npi ? (*pi)(p, i, k) : 0.0);
          e -= Z(p, i, k) * paths.dW(i, k)[p];
        }
        e -= g.value(X(p, i) + Y(p, i), ws) * paths.grid().dt(i);
      }
      r[p] = e;
      m[p] = Y(p, N) - terminal[p];
    }
  });
  SystemResidual out;
  double ss = 0.0, sm = 0.0;
  for (std::size_t p = 0; p < np; ++p) {
    ss += r[p] * r[p];
    sm += m[p] * m[p];
    out.max = std::max(out.max, std::abs(r[p]));
  }
  out.rms = std::sqrt(ss / static_cast<double>(np));
  out.terminal_mismatch_rms = std::sqrt(sm / static_cast<double>(np));
  return out;
}

Problem make_problem(const Scenario& sc, Dynamics dynamics) {
  const MarketModel& m = sc.market;
  TimeGrid grid = make_uniform_grid(m.horizon, sc.numerics.n_steps);
  PathEnsemble paths = simulate_brownian(grid, m.d, m.n, sc.numerics.n_paths, sc.numerics.seed);
  Generator h = Generator::from_spec(sc.generator, m.d);
  if (dynamics == Dynamics::market) {
    std::vector<double> terminal = evaluate_claim(sc.claim, paths, m.theta_hat);
    ProcessPath level = claim_levels(sc.claim, paths, m.theta_hat);
    return Problem{market_transform(h, m.theta_hat), std::move(paths), std::move(terminal), sc.initial_wealth,
                   dynamics, std::move(level)};
  }
  std::vector<double> terminal = evaluate_claim(sc.claim, paths);
  ProcessPath level = claim_levels(sc.claim, paths);
  return Problem{std::move(h), std::move(paths), std::move(terminal), sc.initial_wealth, dynamics, std::move(level)};
}

}  // namespace fbsde
