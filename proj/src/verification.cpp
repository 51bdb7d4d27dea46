#include "fbsde/verification.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "fbsde/engine.hpp"
#include "fbsde/parallel.hpp"
#include "fbsde/rng.hpp"

namespace fbsde {

namespace {

constexpr double kBig = 1e9;

// Standardized mean, clamped so that it stays JSON-representable.
double zscore(double mean, double se) {
  if (se > 0.0) return std::clamp(mean / se, -kBig, kBig);
  if (mean == 0.0) return 0.0;
  return mean > 0.0 ? kBig : -kBig;
}

// Running M^{bc}_i = exp(-sum b dt - sum c . dW - 1/2 sum |c|^2 dt); b, c may be null.
ProcessPath running_density(const ProcessPath* b, const ProcessPath* c, const PathEnsemble& paths,
                            double c_hat_shift = 0.0) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), n = paths.n();
  const int dc = c ? c->dim() : 0;
  ProcessPath M(np, N, 1, Timing::adapted, 1.0);
  parallel_chunks(np, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p) {
      double lm = 0.0;
      for (int i = 0; i < N; ++i) {
        const double dt = paths.grid().dt(i);
        if (b) lm -= (*b)(p, i) * dt;
        for (int k = 0; k < std::max(dc, c_hat_shift != 0.0 ? n : 0); ++k) {
          const double ck = (k < dc ? (*c)(p, i, k) : 0.0) + (k < n ? c_hat_shift : 0.0);
          lm -= ck * paths.dW(i, k)[p] + 0.5 * ck * ck * dt;
        }
        M(p, i + 1) = std::exp(lm);
      }
    }
  });
  return M;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

double max_abs(const ProcessPath& p) {
  double m = 0.0;
  for (double v : p.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

json Check::to_json() const {
  json d = json::object();
  for (const auto& [k, v] : details) d[k] = v;
  return json{{"name", name},
              {"rule", rule},
              {"statistic", statistic},
              {"se", se},
              {"threshold", threshold},
              {"main_pass", main_pass},
              {"control_statistic", control_statistic},
              {"control_detected", control_detected},
              {"pass", pass},
              {"n_paths", n_paths},
              {"details", d}};
}

const Check* VerificationReport::find(const std::string& name) const {
  for (const Check& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

json VerificationReport::to_json() const {
  json arr = json::array();
  for (const Check& c : checks) arr.push_back(c.to_json());
  return json{{"verdict", verdict}, {"checks", arr}};
}

// ---------------------------------------------------------------------------

Check verify_orthogonality(const FBSDESolution& sol, const PathEnsemble& paths) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), n = paths.n();
  const double half = paths.grid().horizon / 2.0;
  Check ck;
  ck.name = "orthogonality";
  ck.rule = "|E[M_T int pi dW_hat]| <= 3 SE for constant, step and sign strategies";
  ck.threshold = 3.0;
  ck.n_paths = np;

  auto worst = [&](double shift, std::vector<std::pair<std::string, double>>* out) {
    const std::vector<double> logm =
        terminal_log_density(&sol.b_star, &sol.c_star, paths);
    std::vector<double> m(np);
    if (shift == 0.0) {
      for (std::size_t p = 0; p < np; ++p) m[p] = std::exp(logm[p]);
    } else {
      const ProcessPath M = running_density(&sol.b_star, &sol.c_star, paths, shift);
      for (std::size_t p = 0; p < np; ++p) m[p] = M(p, N);
    }
    double z = 0.0;
    const char* names[] = {"constant", "step", "sign"};
    std::vector<double> integral(np);
    for (int k = 0; k < n; ++k)
      for (int kind = 0; kind < 3; ++kind) {
        std::fill(integral.begin(), integral.end(), 0.0);
        for (int i = 0; i < N; ++i) {
          const double* dw = paths.dW(i, k);
          const double* w = paths.W(i, k);
          const bool on = paths.grid().t(i) >= half;
          for (std::size_t p = 0; p < np; ++p) {
            const double pi = kind == 0 ? 1.0 : kind == 1 ? (on ? 1.0 : 0.0) : (w[p] > 0.0) - (w[p] < 0.0);
            integral[p] += pi * dw[p];
          }
        }
        for (std::size_t p = 0; p < np; ++p) integral[p] *= m[p];
        const MeanStat s = mean_stat(integral);
        const double zk = std::abs(zscore(s.mean, s.se));
        if (out) {
          const std::string key = std::string(names[kind]) + "_" + std::to_string(k);
          out->emplace_back(key + "_mean", s.mean);
          out->emplace_back(key + "_se", s.se);
        }
        if (zk >= z) {
          z = zk;
          if (out) ck.se = s.se;
        }
      }
    return z;
  };
  ck.statistic = worst(0.0, &ck.details);
  ck.main_pass = ck.statistic <= 3.0;
  ck.control_statistic = worst(0.5, nullptr);
  ck.control_detected = ck.control_statistic > 3.0;
  ck.finish();
  return ck;
}

// ---------------------------------------------------------------------------

ProcessPath perturbation_direction(const PathEnsemble& paths, int n, std::uint64_t seed, std::uint64_t index) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps();
  const CounterRng rng(seed, index);
  ProcessPath delta(np, N, n, Timing::predictable);
  for (int k = 0; k < n; ++k) {
    const auto u1 = rng.uniforms(0, static_cast<std::uint32_t>(2 * k));
    const auto u2 = rng.uniforms(0, static_cast<std::uint32_t>(2 * k + 1));
    const double a = 2.0 * u1[0] - 1.0, b = 2.0 * u1[1] - 1.0, c = 2.0 * u2[0] - 1.0;
    const double s = u2[1] * paths.grid().horizon;
    for (int i = 0; i < N; ++i) {
      const double step = paths.grid().t(i) >= s ? c : 0.0;
      const double* w = paths.W(i, k);
      double* out = delta.slice(i, k);
      for (std::size_t p = 0; p < np; ++p) out[p] = a + b * ((w[p] > 0.0) - (w[p] < 0.0)) + step;
    }
  }
  return delta;
}

Check verify_optimality(const Generator& g, std::span<const double> terminal, const PathEnsemble& paths,
                        const FBSDESolution& sol, const OptimalityOptions& opts) {
  const std::size_t np = paths.n_paths();
  const int n = sol.pi_star.dim();
  Check ck;
  ck.name = "optimality";
  ck.rule = "E(pi*) >= E(pi* + m delta) - 3 SE for every perturbation; concave in m; |dE/dm| at 0 <= 3 SE + 5 dt";
  ck.threshold = -3.0;
  ck.n_paths = np;

  auto utility = [&](const ProcessPath& pi) {
    return utility_of_strategy(g, terminal, paths, &pi, sol.x0, opts.bsde, opts.features).pathwise;
  };
  auto shifted = [&](const ProcessPath& delta, double m) {
    ProcessPath pi = sol.pi_star;
    auto& v = pi.data();
    const auto& d = delta.data();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] += m * d[j];
    return pi;
  };
  // Paired difference a - b.
  auto diff = [](const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> d(a.size());
    for (std::size_t p = 0; p < a.size(); ++p) d[p] = a[p] - b[p];
    return mean_stat(d);
  };

  const std::vector<double> best = utility(sol.pi_star);
  ck.details.emplace_back("utility", mean_stat(best).mean + sol.x0);
  const double scales[] = {0.1, -0.1, 0.5, -0.5};
  double worst = kBig;
  for (int k = 0; k < opts.perturbations; ++k) {
    const ProcessPath delta = perturbation_direction(paths, n, opts.seed, static_cast<std::uint64_t>(k));
    const double m = scales[k % 4];
    const MeanStat s = diff(best, utility(shifted(delta, m)));
    const double z = zscore(s.mean, s.se);
    ck.details.emplace_back("gap_" + std::to_string(k), s.mean);
    ck.details.emplace_back("gap_se_" + std::to_string(k), s.se);
    if (z < worst) {
      worst = z;
      ck.se = s.se;
    }
  }
  ck.statistic = worst;
  bool ok = worst >= -3.0;

  // Concavity of m -> E(pi* + m delta) and the central derivative at 0.
  const ProcessPath delta = perturbation_direction(paths, n, opts.seed, static_cast<std::uint64_t>(opts.perturbations));
  const double ms[] = {-1.0, -0.5, 0.0, 0.5, 1.0};
  std::vector<std::vector<double>> curve;
  for (double m : ms) curve.push_back(m == 0.0 ? best : utility(shifted(delta, m)));
  double worst_curv = -kBig;
  for (int j = 1; j < 4; ++j) {
    std::vector<double> sd(np);
    for (std::size_t p = 0; p < np; ++p)
      sd[p] = curve[static_cast<std::size_t>(j) - 1][p] - 2.0 * curve[static_cast<std::size_t>(j)][p] +
              curve[static_cast<std::size_t>(j) + 1][p];
    const MeanStat s = mean_stat(sd);
    ck.details.emplace_back("second_difference_" + std::to_string(j), s.mean);
    worst_curv = std::max(worst_curv, zscore(s.mean, s.se));
  }
  ck.details.emplace_back("second_difference_worst_z", worst_curv);
  ok = ok && worst_curv <= 3.0;
  const double h = 0.1;
  const MeanStat der = diff(utility(shifted(delta, h)), utility(shifted(delta, -h)));
  // The continuous-time optimizer is stationary only up to the time step.
  const double slope = der.mean / (2.0 * h), slope_se = der.se / (2.0 * h);
  const double slope_tol = 3.0 * slope_se + 5.0 * paths.grid().dt(0);
  ck.details.emplace_back("central_derivative", slope);
  ck.details.emplace_back("central_derivative_se", slope_se);
  ck.details.emplace_back("central_derivative_tolerance", slope_tol);
  ok = ok && std::abs(slope) <= slope_tol;
  ck.main_pass = ok;

  // Control: doubled strategy, or a unit shift when pi* is zero.
  ProcessPath bad = sol.pi_star;
  if (max_abs(sol.pi_star) < 1e-8)
    for (double& v : bad.data()) v += 1.0;
  else
    for (double& v : bad.data()) v *= 2.0;
  const MeanStat cs = diff(best, utility(bad));
  ck.control_statistic = zscore(cs.mean, cs.se);
  ck.control_detected = ck.control_statistic > 3.0;
  ck.finish();
  return ck;
}

// ---------------------------------------------------------------------------

Check verify_density_identity(const ProcessPath& U, const ProcessPath& V, const ProcessPath& b,
                              const ProcessPath* c_tilde, const PathEnsemble& paths) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d(), n = paths.n();
  Check ck;
  ck.name = "density_identity";
  ck.rule = "median path-wise relative error <= 5 dt";
  ck.threshold = 5.0 * paths.grid().dt(0);
  ck.n_paths = np;

  // log M^{bc}_T - log RHS without the -U_0 term.
  std::vector<double> gap(np);
  parallel_chunks(np, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p) {
      double lhs = 0.0, rhs = 0.0;
      for (int i = 0; i < N; ++i) {
        const double dt = paths.grid().dt(i);
        lhs -= b(p, i) * dt;
        for (int k = 0; k < d; ++k) {
          const double c = k < n ? V(p, i, k) : (c_tilde ? (*c_tilde)(p, i, k - n) : 0.0);
          lhs -= c * paths.dW(i, k)[p] + 0.5 * c * c * dt;
          if (k >= n) {
            const double v = V(p, i, k);
            rhs += -0.5 * v * v * dt + v * paths.dW(i, k)[p];
          }
        }
      }
      gap[p] = lhs - rhs;
    }
  });
  auto rel = [&](double u_shift) {
    std::vector<double> r(np);
    for (std::size_t p = 0; p < np; ++p) r[p] = std::abs(std::expm1(gap[p] + U(p, 0) + u_shift));
    return r;
  };
  std::vector<double> r = rel(0.0);
  ck.statistic = median(r);
  ck.details.emplace_back("max_relative_error", *std::max_element(r.begin(), r.end()));
  ck.main_pass = ck.statistic <= ck.threshold;
  // Shift U_0 by 0.1, or enough to clear a coarse-grid threshold fourfold.
  ck.control_statistic = median(rel(std::max(0.1, std::log1p(4.0 * ck.threshold))));
  ck.control_detected = ck.control_statistic > ck.threshold;
  ck.finish();
  return ck;
}

// ---------------------------------------------------------------------------

Check verify_integration_by_parts(const ProcessPath& b, const ProcessPath& c, const ProcessPath& pi, const PathEnsemble& paths,
                      int t_index, const double* analytic) {
  const std::size_t np = paths.n_paths();
  const int n = pi.dim();
  if (t_index < 0 || t_index > paths.n_steps()) throw Error(ErrorCode::invalid_argument, "node outside the grid");
  Check ck;
  ck.name = "integration_by_parts";
  ck.rule = "|E[LHS - RHS]| <= 3 SE on paired paths";
  ck.threshold = 3.0;
  ck.n_paths = np;

  auto sides = [&](double shift, std::vector<double>& lhs, std::vector<double>& rhs) {
    const ProcessPath M = running_density(&b, &c, paths, shift);
    const ProcessPath M0 = shift == 0.0 ? ProcessPath() : running_density(&b, &c, paths);
    const ProcessPath& Mr = shift == 0.0 ? M : M0;
    lhs.assign(np, 0.0);
    rhs.assign(np, 0.0);
    parallel_chunks(np, [&](std::size_t, std::size_t lo, std::size_t hi) {
      for (std::size_t p = lo; p < hi; ++p) {
        double I = 0.0, r = 0.0;
        for (int i = 0; i < t_index; ++i) {
          const double dt = paths.grid().dt(i);
          double cp = 0.0, inc = 0.0;
          for (int k = 0; k < n; ++k) {
            cp += c(p, i, k) * pi(p, i, k);
            inc += pi(p, i, k) * paths.dW(i, k)[p];
          }
          r -= Mr(p, i) * (cp + b(p, i) * I) * dt;
          I += inc;
        }
        lhs[p] = M(p, t_index) * I;
        rhs[p] = r;
      }
    });
  };
  std::vector<double> lhs, rhs, d(np);
  sides(0.0, lhs, rhs);
  for (std::size_t p = 0; p < np; ++p) d[p] = lhs[p] - rhs[p];
  const MeanStat s = mean_stat(d);
  const MeanStat ls = mean_stat(lhs), rs = mean_stat(rhs);
  ck.se = s.se;
  ck.statistic = std::abs(zscore(s.mean, s.se));
  ck.details.emplace_back("lhs", ls.mean);
  ck.details.emplace_back("lhs_se", ls.se);
  ck.details.emplace_back("rhs", rs.mean);
  ck.details.emplace_back("rhs_se", rs.se);
  ck.details.emplace_back("difference", s.mean);
  bool ok = ck.statistic <= 3.0;
  if (analytic) {
    const double za = std::abs(zscore(ls.mean - *analytic, ls.se));
    ck.details.emplace_back("analytic", *analytic);
    ck.details.emplace_back("analytic_z", za);
    ok = ok && za <= 3.0;
  }
  ck.main_pass = ok;
  std::vector<double> lc, rc;
  sides(0.5, lc, rc);
  for (std::size_t p = 0; p < np; ++p) d[p] = lc[p] - rc[p];
  const MeanStat cs = mean_stat(d);
  ck.control_statistic = std::abs(zscore(cs.mean, cs.se));
  ck.control_detected = ck.control_statistic > 3.0;
  ck.finish();
  return ck;
}

// ---------------------------------------------------------------------------

namespace {

struct Sampler {
  CounterRng rng;
  std::uint32_t counter = 0;
  double uniform(double lo, double hi) {
    const auto u = rng.uniforms(counter++, 0);
    return lo + (hi - lo) * u[1];
  }
};

// Interior level for the kind: power and recursive need y > 0.
double sample_level(const Generator& g, Sampler& s) {
  switch (g.kind()) {
    case GeneratorKind::power_ce:
    case GeneratorKind::recursive_kp: return s.uniform(0.3, 3.0);
    default: return s.uniform(-2.0, 2.0);
  }
}

}  // namespace

Check verify_young(const Generator& g, std::size_t samples, std::uint64_t seed) {
  const int d = g.d(), n = std::max(g.n(), 1);
  Check ck;
  ck.name = "young_driver_change";
  ck.rule = "min Fenchel-Young and driver-change slack >= -1e-10; gradient vs central differences <= 1e-6";
  ck.threshold = -1e-10;
  ck.n_paths = samples;
  Sampler s{CounterRng(seed, 0x796f756e67ULL)};
  std::vector<double> w(static_cast<std::size_t>(d)), w2(static_cast<std::size_t>(d)), c(static_cast<std::size_t>(d)),
      z(static_cast<std::size_t>(d)), zbar(static_cast<std::size_t>(d)), pi(static_cast<std::size_t>(n)),
      grad(static_cast<std::size_t>(d)), tmp(static_cast<std::size_t>(d));
  double min_young = kBig, min_driver = kBig, min_control = kBig, max_fd = 0.0;
  for (std::size_t j = 0; j < samples; ++j) {
    // Point (s, w) and coefficients (b, c) = gradient at (s2, w2); every
    // other sample touches (s2, w2) = (s, w).
    const double sv = sample_level(g, s);
    for (auto& v : w) v = s.uniform(-1.5, 1.5);
    double s2 = sv;
    w2 = w;
    if (j % 2 == 1) {
      s2 = sample_level(g, s);
      for (auto& v : w2) v = s.uniform(-1.5, 1.5);
    }
    const double b = g.dy(s2, w2);
    g.dz(s2, w2, c);
    const double gstar = g.conjugate(b, c);
    const double X = s.uniform(-1.0, 1.0);
    for (auto& v : pi) v = s.uniform(-1.0, 1.0);
    const double y = sv - X;
    double cz = 0.0, cpi = 0.0;
    for (int k = 0; k < d; ++k) {
      z[static_cast<std::size_t>(k)] = w[static_cast<std::size_t>(k)] - (k < g.n() ? pi[static_cast<std::size_t>(k)] : 0.0);
      cz += c[static_cast<std::size_t>(k)] * z[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < g.n(); ++k) cpi += c[static_cast<std::size_t>(k)] * pi[static_cast<std::size_t>(k)];
    const double a = gstar - cpi - b * X;
    const double young = g.value(sv, w) - (b * y + cz - a);
    min_young = std::min(min_young, young);

    // Driver change at M, A with ybar, zbar mapped from (y, z).
    const double M = s.uniform(0.2, 2.0), A = s.uniform(-1.0, 1.0);
    const double ybar = M * y + A;
    for (int k = 0; k < d; ++k)
      zbar[static_cast<std::size_t>(k)] = M * z[static_cast<std::size_t>(k)] - M * y * c[static_cast<std::size_t>(k)];
    const std::span<const double> pih(pi.data(), static_cast<std::size_t>(g.n()));
    min_driver = std::min(min_driver, driver_change(g, b, c, a, M, A, X, pih, ybar, zbar));
    min_control = std::min(min_control, driver_change(g, b, c, a - 1.0, M, A, X, pih, ybar, zbar));

    // Central differences of g at (s, w).
    const double gy = g.dy(sv, w);
    g.dz(sv, w, grad);
    const double h = 1e-5 * std::max(1.0, std::abs(sv));
    const double fy = (g.value(sv + h, w) - g.value(sv - h, w)) / (2.0 * h);
    max_fd = std::max(max_fd, std::abs(fy - gy) / std::max(1.0, std::abs(gy)));
    for (int k = 0; k < d; ++k) {
      tmp = w;
      const double hk = 1e-5 * std::max(1.0, std::abs(w[static_cast<std::size_t>(k)]));
      tmp[static_cast<std::size_t>(k)] += hk;
      const double up = g.value(sv, tmp);
      tmp[static_cast<std::size_t>(k)] -= 2.0 * hk;
      const double dn = g.value(sv, tmp);
      const double fd = (up - dn) / (2.0 * hk);
      const double an = grad[static_cast<std::size_t>(k)];
      max_fd = std::max(max_fd, std::abs(fd - an) / std::max(1.0, std::abs(an)));
    }
  }
  ck.statistic = std::min(min_young, min_driver);
  ck.details.emplace_back("min_young_slack", min_young);
  ck.details.emplace_back("min_driver_change", min_driver);
  ck.details.emplace_back("max_gradient_error", max_fd);
  ck.main_pass = min_young >= -1e-10 && min_driver >= -1e-10 && max_fd <= 1e-6;
  ck.control_statistic = min_control;
  ck.control_detected = min_control < -1e-10;
  ck.finish();
  return ck;
}

// ---------------------------------------------------------------------------

Check verify_submartingale_control(const Generator& g, const FBSDESolution& sol, const PathEnsemble& paths,
                                   const SubmartingaleOptions& opts) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d(), n = sol.pi_star.dim();
  const double T = paths.grid().horizon, eps = opts.epsilon;
  Check ck;
  ck.name = "submartingale";
  ck.rule = "int M (Z - Y c) dW has zero drift within eps dt / 4 per step + 3 SE; Y + eps (T - t) fails, "
            "Y - eps (T - t) passes one-sided";
  ck.n_paths = np;
  const ProcessPath M = running_density(&sol.b_star, &sol.c_star, paths);
  StateFeatures feats(paths);
  feats.add(sol.X);
  for (const ProcessPath* f : opts.features) feats.add(*f);
  const double tol = 0.25 * eps * paths.grid().dt(0);

  auto process = [&](double shift) {
    ProcessPath Np(np, N, 1, Timing::adapted);
    parallel_chunks(np, [&](std::size_t, std::size_t lo, std::size_t hi) {
      std::array<double, kMaxDim> w{};
      const std::span<const double> ws(w.data(), static_cast<std::size_t>(d));
      for (std::size_t p = lo; p < hi; ++p) {
        const double y0 = sol.Y(p, 0) + shift * T;
        double run = 0.0;
        for (int i = 0; i <= N; ++i) {
          const double yi = sol.Y(p, i) + shift * (T - paths.grid().t(i));
          Np(p, i) = M(p, i) * yi - y0 - run;
          if (i == N) break;
          double cz = 0.0;
          for (int k = 0; k < d; ++k) {
            w[static_cast<std::size_t>(k)] = sol.Z(p, i, k) + (k < n ? sol.pi_star(p, i, k) : 0.0);
            cz += sol.c_star(p, i, k) * sol.Z(p, i, k);
          }
          const double gv = g.value(sol.X(p, i) + yi, ws);
          run += M(p, i) * (gv - sol.b_star(p, i) * yi - cz) * paths.grid().dt(i);
        }
      }
    });
    return Np;
  };
  const SubmartingaleDiagnostic main = submartingale_check(process(0.0), feats, opts.basis, tol, true);
  const SubmartingaleDiagnostic up = submartingale_check(process(eps), feats, opts.basis, tol, false);
  const SubmartingaleDiagnostic down = submartingale_check(process(-eps), feats, opts.basis, tol, false);
  ck.statistic = main.worst_margin;
  ck.se = main.worst_se;
  ck.threshold = 0.0;
  ck.details.emplace_back("worst_cumulative_drift", main.worst_cumulative);
  ck.details.emplace_back("worst_step", main.worst_step);
  ck.details.emplace_back("min_conditional_drift", main.min_conditional_drift);
  ck.details.emplace_back("raised_margin", up.worst_margin);
  ck.details.emplace_back("lowered_margin", down.worst_margin);
  ck.main_pass = main.pass;
  ck.control_statistic = up.worst_margin;
  ck.control_detected = !up.pass && down.pass;
  ck.finish();
  return ck;
}

// ---------------------------------------------------------------------------

Check verify_linear_representation(const FBSDESolution& sol, std::span<const double> terminal,
                                   const PathEnsemble& paths) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps();
  Check ck;
  ck.name = "linear_representation";
  ck.rule = "|Y_0 - E[M_T F + int M a dt]| <= max(3 SE, 5e-3)";
  ck.n_paths = np;
  const ProcessPath M = running_density(&sol.b_star, &sol.c_star, paths);
  auto gap = [&](double a_shift, double& se) {
    std::vector<double> v(np);
    for (std::size_t p = 0; p < np; ++p) {
      double acc = M(p, N) * terminal[p];
      for (int i = 0; i < N; ++i) acc += M(p, i) * (sol.a_star(p, i) + a_shift) * paths.grid().dt(i);
      v[p] = acc;
    }
    const MeanStat s = mean_stat(v);
    se = s.se;
    return s.mean;
  };
  const double y0 = mean_stat(sol.Y.slice(0), np).mean;
  double se = 0.0, cse = 0.0;
  const double rhs = gap(0.0, se);
  ck.se = se;
  ck.threshold = std::max(3.0 * se, 5e-3);
  ck.statistic = std::abs(y0 - rhs);
  ck.details.emplace_back("y0", y0);
  ck.details.emplace_back("linear_value", rhs);
  ck.main_pass = ck.statistic <= ck.threshold;
  const double crhs = gap(0.1, cse);
  ck.control_statistic = std::abs(y0 - crhs);
  ck.control_detected = ck.control_statistic > std::max(3.0 * cse, 5e-3);
  ck.finish();
  return ck;
}

// ---------------------------------------------------------------------------

Check verify_pointwise_gradient(const Generator& g, const FBSDESolution& sol, const PathEnsemble& paths,
                                double threshold) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), d = paths.d(), n = sol.pi_star.dim();
  Check ck;
  ck.name = "pointwise_gradient";
  ck.rule = "converged and max |V_hat - d_zhat g(X + Y, Z + pi)| <= threshold";
  ck.threshold = threshold;
  ck.n_paths = np;
  std::vector<double> worst(chunk_count(np), 0.0);
  parallel_chunks(np, [&](std::size_t ch, std::size_t lo, std::size_t hi) {
    std::array<double, kMaxDim> w{}, gr{};
    for (int i = 0; i < N; ++i)
      for (std::size_t p = lo; p < hi; ++p) {
        for (int k = 0; k < d; ++k) w[static_cast<std::size_t>(k)] = sol.Z(p, i, k) + (k < n ? sol.pi_star(p, i, k) : 0.0);
        g.dz(sol.X(p, i) + sol.Y(p, i), std::span<const double>(w.data(), static_cast<std::size_t>(d)),
             std::span<double>(gr.data(), static_cast<std::size_t>(d)));
        for (int k = 0; k < n; ++k)
          worst[ch] = std::max(worst[ch], std::abs(sol.V(p, i, k) - gr[static_cast<std::size_t>(k)]));
      }
  });
  ck.statistic = *std::max_element(worst.begin(), worst.end());
  ck.details.emplace_back("converged", sol.converged ? 1.0 : 0.0);
  ck.main_pass = sol.converged && ck.statistic <= threshold;
  // Shifting V_hat by 0.1 moves the residual by 0.1 wherever it was below 0.05.
  ck.control_statistic = std::max(0.1 - ck.statistic, ck.statistic);
  ck.control_detected = ck.control_statistic > threshold;
  ck.finish();
  return ck;
}

Check verify_forward_consistency(const FBSDESolution& sol, const PathEnsemble& paths) {
  const std::size_t np = paths.n_paths();
  const int N = paths.n_steps(), n = sol.pi_star.dim();
  Check ck;
  ck.name = "forward_consistency";
  ck.rule = "max |X - x - sum pi dW_hat| <= 1e-12 (1 + max |X|)";
  ck.n_paths = np;
  ck.threshold = 1e-12 * (1.0 + max_abs(sol.X));
  double worst = 0.0, last = 0.0;
  std::vector<double> acc(np, sol.x0);
  for (int i = 0; i <= N; ++i) {
    const double* x = sol.X.slice(i);
    for (std::size_t p = 0; p < np; ++p) {
      worst = std::max(worst, std::abs(x[p] - acc[p]));
      if (i == N) last = std::max(last, std::abs(x[p] + 1e-6 - acc[p]));
    }
    if (i == N) break;
    for (int k = 0; k < n; ++k) {
      const double* pi = sol.pi_star.slice(i, k);
      const double* dw = paths.dW(i, k);
      for (std::size_t p = 0; p < np; ++p) acc[p] += pi[p] * dw[p];
    }
  }
  ck.statistic = worst;
  ck.main_pass = worst <= ck.threshold;
  ck.control_statistic = std::max(worst, last);
  ck.control_detected = ck.control_statistic > ck.threshold;
  ck.finish();
  return ck;
}

// ---------------------------------------------------------------------------

VerifyOptions verify_options(const Numerics& n) {
  VerifyOptions o;
  o.basis.degree = n.basis_degree;
  o.basis.ridge = n.ridge;
  o.seed = n.seed;
  o.gradient_threshold = 10.0 * n.tol_path;
  return o;
}

VerificationReport verify_solution(const Problem& problem, FBSDESolution sol, const VerifyOptions& opts) {
  const PathEnsemble& paths = problem.paths;
  const int n = paths.n(), d = paths.d();
  fill_optimal_coefficients(problem.g, sol, paths);
  fill_solution_residuals(sol, paths);
  VerificationReport rep;
  rep.add(verify_forward_consistency(sol, paths));
  rep.add(verify_pointwise_gradient(problem.g, sol, paths, opts.gradient_threshold));
  rep.add(verify_orthogonality(sol, paths));
  rep.add(verify_linear_representation(sol, problem.terminal, paths));

  ProcessPath ct;
  if (d > n) {
    ct = ProcessPath(paths.n_paths(), paths.n_steps(), d - n, Timing::predictable);
    for (int i = 0; i < paths.n_steps(); ++i)
      for (int k = n; k < d; ++k) std::copy_n(sol.c_star.slice(i, k), paths.n_paths(), ct.slice(i, k - n));
  }
  rep.add(verify_density_identity(sol.U, sol.V, sol.b_star, d > n ? &ct : nullptr, paths));
  rep.add(verify_integration_by_parts(sol.b_star, sol.c_star, sol.pi_star, paths, paths.n_steps()));
  rep.add(verify_young(problem.g, opts.young_samples, opts.seed));

  SubmartingaleOptions so;
  so.basis = opts.basis;
  so.features = problem.features();
  rep.add(verify_submartingale_control(problem.g, sol, paths, so));

  OptimalityOptions oo;
  oo.bsde.basis = opts.basis;
  oo.perturbations = opts.perturbations;
  oo.seed = opts.seed;
  oo.features = problem.features();
  rep.add(verify_optimality(problem.g, problem.terminal, paths, sol, oo));
  return rep;
}

}  // namespace fbsde
