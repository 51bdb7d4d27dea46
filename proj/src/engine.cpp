#include "fbsde/engine.hpp"

#include <cmath>
#include <memory>

#include "fbsde/parallel.hpp"

namespace fbsde {

ProcessPath constant_process(std::size_t n_paths, int n_steps, std::span<const double> values, Timing timing) {
  ProcessPath out(n_paths, n_steps, static_cast<int>(values.size()), timing);
  for (int i = 0; i < out.length(); ++i)
    for (int k = 0; k < out.dim(); ++k) {
      double* s = out.slice(i, k);
      std::fill(s, s + n_paths, values[static_cast<std::size_t>(k)]);
    }
  return out;
}

ProcessPath ito_integral(const ProcessPath& integrand, const PathEnsemble& paths, int first_component) {
  if (integrand.timing() != Timing::predictable || integrand.n_paths() != paths.n_paths() ||
      integrand.n_steps() != paths.n_steps() || first_component < 0 ||
      first_component + integrand.dim() > paths.d())
    throw Error(ErrorCode::invalid_argument, "integrand shape does not match the ensemble");
  const std::size_t np = paths.n_paths();
  ProcessPath out(np, paths.n_steps(), 1, Timing::adapted);
  parallel_chunks(np, [&](std::size_t, std::size_t b, std::size_t e) {
    for (int i = 0; i < paths.n_steps(); ++i) {
      const double* cur = out.slice(i);
      double* next = out.slice(i + 1);
      for (std::size_t p = b; p < e; ++p) next[p] = cur[p];
      for (int k = 0; k < integrand.dim(); ++k) {
        const double* h = integrand.slice(i, k);
        const double* dw = paths.dW(i, first_component + k);
        for (std::size_t p = b; p < e; ++p) next[p] += h[p] * dw[p];
      }
    }
  });
  return out;
}

Density stochastic_exponential(ProcessPath c, const PathEnsemble& paths) {
  if (c.timing() != Timing::predictable || c.n_paths() != paths.n_paths() || c.n_steps() != paths.n_steps() ||
      c.dim() > paths.d())
    throw Error(ErrorCode::invalid_argument, "density integrand shape does not match the ensemble");
  const std::size_t np = paths.n_paths();
  Density out{std::move(c), ProcessPath(np, paths.n_steps(), 1, Timing::adapted),
              ProcessPath(np, paths.n_steps(), 1, Timing::adapted)};
  const auto& grid = paths.grid();
  parallel_chunks(np, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t p = b; p < e; ++p) out.M(p, 0) = 1.0;
    for (int i = 0; i < paths.n_steps(); ++i) {
      const double dt = grid.dt(i);
      for (std::size_t p = b; p < e; ++p) {
        double inc = 0.0;
        for (int k = 0; k < out.c.dim(); ++k) {
          const double ck = out.c(p, i, k);
          inc += -ck * paths.dW(i, k)[p] - 0.5 * ck * ck * dt;
        }
        out.logM(p, i + 1) = out.logM(p, i) + inc;
        out.M(p, i + 1) = std::exp(out.logM(p, i + 1));
      }
    }
  });
  return out;
}

Discount make_discount(ProcessPath b, const TimeGrid& grid) {
  if (b.timing() != Timing::predictable || b.dim() != 1 || b.n_steps() != grid.n_steps)
    throw Error(ErrorCode::invalid_argument, "discount rate must be a predictable scalar process on the grid");
  const std::size_t np = b.n_paths();
  Discount out{std::move(b), ProcessPath(np, grid.n_steps, 1, Timing::adapted),
               ProcessPath(np, grid.n_steps, 1, Timing::adapted)};
  parallel_chunks(np, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p) out.D(p, 0) = 1.0;
    for (int i = 0; i < grid.n_steps; ++i)
      for (std::size_t p = lo; p < hi; ++p) {
        out.logD(p, i + 1) = out.logD(p, i) - out.b(p, i) * grid.dt(i);
        out.D(p, i + 1) = std::exp(out.logD(p, i + 1));
      }
  });
  return out;
}

ProcessPath combined_density(const Discount& b, const Density& c) {
  if (!b.logD.same_shape(c.logM)) throw Error(ErrorCode::invalid_argument, "discount and density grids differ");
  ProcessPath out(c.logM.n_paths(), c.logM.n_steps(), 1, Timing::adapted);
  auto& v = out.data();
  const auto& ld = b.logD.data();
  const auto& lm = c.logM.data();
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = std::exp(ld[j] + lm[j]);
  return out;
}

PathEnsemble girsanov_shift(const PathEnsemble& paths, const ProcessPath& theta_hat) {
  if (theta_hat.timing() != Timing::predictable || theta_hat.dim() != paths.n() ||
      theta_hat.n_paths() != paths.n_paths() || theta_hat.n_steps() != paths.n_steps())
    throw Error(ErrorCode::invalid_argument, "theta_hat must be predictable with n components");
  const std::size_t np = paths.n_paths();
  ProcessPath inc = paths.increments();
  auto density = std::make_shared<ProcessPath>(np, paths.n_steps(), 1, Timing::adapted);
  const auto& grid = paths.grid();
  parallel_chunks(np, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t p = b; p < e; ++p) {
      double logm = 0.0;
      (*density)(p, 0) = 1.0;
      for (int i = 0; i < paths.n_steps(); ++i) {
        const double dt = grid.dt(i);
        for (int k = 0; k < paths.n(); ++k) {
          const double th = theta_hat(p, i, k);
          logm += -th * paths.dW(i, k)[p] - 0.5 * th * th * dt;
          inc(p, i, k) += th * dt;
        }
        (*density)(p, i + 1) = std::exp(logm);
      }
    }
  });
  PathEnsemble out(grid, paths.d(), paths.n(), paths.seed(), std::move(inc));
  out.set_shift_density(std::move(density));
  return out;
}

PathEnsemble girsanov_shift(const PathEnsemble& paths, std::span<const double> theta_hat) {
  if (static_cast<int>(theta_hat.size()) != paths.n())
    throw Error(ErrorCode::invalid_argument, "theta_hat must have n components");
  return girsanov_shift(paths, constant_process(paths.n_paths(), paths.n_steps(), theta_hat, Timing::predictable));
}

std::vector<double> terminal_log_density(const ProcessPath* b, const ProcessPath* c, const PathEnsemble& paths) {
  const std::size_t np = paths.n_paths();
  std::vector<double> out(np, 0.0);
  const auto& grid = paths.grid();
  parallel_chunks(np, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (int i = 0; i < paths.n_steps(); ++i) {
      const double dt = grid.dt(i);
      for (std::size_t p = lo; p < hi; ++p) {
        double inc = 0.0;
        if (b) inc -= (*b)(p, i) * dt;
        if (c)
          for (int k = 0; k < c->dim(); ++k) {
            const double ck = (*c)(p, i, k);
            inc += -ck * paths.dW(i, k)[p] - 0.5 * ck * ck * dt;
          }
        out[p] += inc;
      }
    }
  });
  return out;
}

}  // namespace fbsde
