#include "fbsde/regression.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "fbsde/parallel.hpp"

namespace fbsde {

namespace {

void monomials(std::size_t k, int degree, std::vector<std::vector<int>>& out) {
  out.clear();
  std::vector<int> e(k, 0);
  out.push_back(e);
  for (int deg = 1; deg <= degree; ++deg) {
    // all exponent vectors of total degree deg, graded lexicographic
    std::vector<int> cur(k, 0);
    auto rec = [&](auto&& self, std::size_t pos, int left) -> void {
      if (pos + 1 == k) {
        cur[pos] = left;
        out.push_back(cur);
        cur[pos] = 0;
        return;
      }
      for (int v = left; v >= 0; --v) {
        cur[pos] = v;
        self(self, pos + 1, left - v);
      }
      cur[pos] = 0;
    };
    if (k > 0) rec(rec, 0, deg);
  }
}

}  // namespace

Projector::Projector(const std::vector<const double*>& features, std::size_t n_paths, const RegressionBasis& basis)
    : n_(n_paths) {
  if (basis.degree < 0) throw Error(ErrorCode::invalid_argument, "basis degree must be >= 0");
  std::vector<const double*> kept;
  std::vector<double> mean, inv_sd;
  for (const double* f : features) {
    MeanStat s = mean_stat(f, n_paths);
    const double sd = std::sqrt(s.variance);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(s.mean)))) continue;
    kept.push_back(f);
    mean.push_back(s.mean);
    inv_sd.push_back(1.0 / sd);
  }
  kept_ = kept.size();
  std::vector<std::vector<int>> expo;
  monomials(kept_, basis.degree, expo);
  m_ = expo.size();
  if (n_paths <= m_)
    throw Error(ErrorCode::regression_singular, "number of paths must exceed the basis dimension");

  // Each monomial as the list of feature indices it multiplies (with repetition).
  std::vector<std::size_t> factor_start(m_ + 1, 0);
  std::vector<std::size_t> factors;
  for (std::size_t j = 0; j < m_; ++j) {
    for (std::size_t f = 0; f < kept_; ++f)
      for (int q = 0; q < expo[j][f]; ++q) factors.push_back(f);
    factor_start[j + 1] = factors.size();
  }
  phi_.assign(n_ * m_, 0.0);
  parallel_chunks(n_, [&](std::size_t, std::size_t b, std::size_t e) {
    std::vector<double> x(kept_);
    for (std::size_t p = b; p < e; ++p) {
      for (std::size_t f = 0; f < kept_; ++f) x[f] = (kept[f][p] - mean[f]) * inv_sd[f];
      double* row = phi_.data() + p * m_;
      for (std::size_t j = 0; j < m_; ++j) {
        double v = 1.0;
        for (std::size_t q = factor_start[j]; q < factor_start[j + 1]; ++q) v *= x[factors[q]];
        row[j] = v;
      }
    }
  });

  const std::size_t m = m_;
  std::vector<double> gram = chunked_vector_sum(n_, m * m, [&](std::size_t b, std::size_t e, double* acc) {
    for (std::size_t p = b; p < e; ++p) {
      const double* row = phi_.data() + p * m;
      for (std::size_t r = 0; r < m; ++r) {
        const double vr = row[r];
        for (std::size_t c = r; c < m; ++c) acc[r * m + c] += vr * row[c];
      }
    }
  });
  const auto mi = static_cast<Eigen::Index>(m);
  Eigen::MatrixXd G(mi, mi);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = r; c < m; ++c) {
      const double v = gram[r * m + c] / static_cast<double>(n_);
      G(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
      G(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r)) = v;
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
  if (eig.info() != Eigen::Success) throw Error(ErrorCode::regression_singular, "eigen-decomposition failed");
  const auto& lam = eig.eigenvalues();
  const double lmax = lam.maxCoeff();
  if (!(lmax > 0.0) || !std::isfinite(lmax)) throw Error(ErrorCode::regression_singular, "design matrix is degenerate");
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(mi, mi);
  for (Eigen::Index j = 0; j < mi; ++j) {
    if (lam(j) <= basis.rcond * lmax) {
      if (basis.ridge == 0.0)
        throw Error(ErrorCode::regression_singular, "design matrix is rank deficient and ridge is zero");
      continue;
    }
    const Eigen::VectorXd u = eig.eigenvectors().col(j);
    P += (u * u.transpose()) / (lam(j) + basis.ridge);
  }
  pinv_.resize(m * m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < m; ++c) pinv_[r * m + c] = P(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

std::vector<double> Projector::coefficients(const double* target) const {
  const std::size_t m = m_;
  std::vector<double> rhs = chunked_vector_sum(n_, m, [&](std::size_t b, std::size_t e, double* acc) {
    for (std::size_t p = b; p < e; ++p) {
      const double* row = phi_.data() + p * m;
      const double y = target[p];
      for (std::size_t j = 0; j < m; ++j) acc[j] += row[j] * y;
    }
  });
  std::vector<double> coef(m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += pinv_[r * m + c] * rhs[c];
    coef[r] = s / static_cast<double>(n_);
  }
  return coef;
}

void Projector::predict(const std::vector<double>& coef, double* out) const {
  const std::size_t m = m_;
  parallel_chunks(n_, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t p = b; p < e; ++p) {
      const double* row = phi_.data() + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += row[j] * coef[j];
      out[p] = s;
    }
  });
}

void Projector::project(const double* target, double* out) const { predict(coefficients(target), out); }

StateFeatures::StateFeatures(const PathEnsemble& paths, bool include_levels)
    : paths_(&paths), levels_(include_levels) {}

StateFeatures& StateFeatures::add(const ProcessPath& adapted_scalar) {
  if (adapted_scalar.timing() != Timing::adapted || adapted_scalar.n_paths() != paths_->n_paths() ||
      adapted_scalar.n_steps() != paths_->n_steps())
    throw Error(ErrorCode::invalid_argument, "state feature must be adapted on the ensemble grid");
  extra_.push_back(&adapted_scalar);
  return *this;
}

std::vector<const double*> StateFeatures::at(int node) const {
  std::vector<const double*> f;
  if (levels_)
    for (int k = 0; k < paths_->d(); ++k) f.push_back(paths_->W(node, k));
  for (const ProcessPath* e : extra_)
    for (int k = 0; k < e->dim(); ++k) f.push_back(e->slice(node, k));
  return f;
}

std::vector<double> conditional_expectation(std::span<const double> target, const std::vector<const double*>& state,
                                            const RegressionBasis& basis) {
  Projector proj(state, target.size(), basis);
  std::vector<double> out(target.size());
  proj.project(target.data(), out.data());
  return out;
}

Representation martingale_representation(std::span<const double> terminal, const StateFeatures& features,
                                         const RegressionBasis& basis) {
  const PathEnsemble& paths = features.paths();
  const std::size_t np = paths.n_paths();
  if (terminal.size() != np) throw Error(ErrorCode::invalid_argument, "terminal values do not match the ensemble");
  Representation rep;
  rep.Z = ProcessPath(np, paths.n_steps(), paths.d(), Timing::predictable);
  std::vector<double> cur(terminal.begin(), terminal.end()), proj(np), work(np);
  for (int i = paths.n_steps() - 1; i >= 0; --i) {
    Projector P(features.at(i), np, basis);
    P.project(cur.data(), proj.data());
    const double dt = paths.grid().dt(i);
    for (int k = 0; k < paths.d(); ++k) {
      const double* dw = paths.dW(i, k);
      for (std::size_t p = 0; p < np; ++p) work[p] = (cur[p] - proj[p]) * dw[p];
      double* z = rep.Z.slice(i, k);
      P.project(work.data(), z);
      for (std::size_t p = 0; p < np; ++p) z[p] /= dt;
    }
    std::swap(cur, proj);
  }
  rep.mean = cur[0];
  rep.residual.assign(terminal.begin(), terminal.end());
  for (std::size_t p = 0; p < np; ++p) rep.residual[p] -= rep.mean;
  for (int i = 0; i < paths.n_steps(); ++i)
    for (int k = 0; k < paths.d(); ++k) {
      const double* z = rep.Z.slice(i, k);
      const double* dw = paths.dW(i, k);
      for (std::size_t p = 0; p < np; ++p) rep.residual[p] -= z[p] * dw[p];
    }
  double ss = 0.0, mx = 0.0;
  for (double r : rep.residual) {
    ss += r * r;
    mx = std::max(mx, std::abs(r));
  }
  rep.residual_rms = std::sqrt(ss / static_cast<double>(np));
  rep.residual_max = mx;
  return rep;
}

SubmartingaleDiagnostic submartingale_check(const ProcessPath& process, const StateFeatures& features,
                                            const RegressionBasis& basis, double tol, bool two_sided) {
  const PathEnsemble& paths = features.paths();
  if (process.timing() != Timing::adapted || process.dim() != 1 || process.n_paths() != paths.n_paths() ||
      process.n_steps() != paths.n_steps())
    throw Error(ErrorCode::invalid_argument, "process must be an adapted scalar on the ensemble grid");
  const std::size_t np = paths.n_paths();
  SubmartingaleDiagnostic out;
  out.two_sided = two_sided;
  out.min_conditional_drift = std::numeric_limits<double>::infinity();
  out.min_mean_drift = std::numeric_limits<double>::infinity();
  out.worst_margin = std::numeric_limits<double>::infinity();
  std::vector<double> inc(np), fitted(np), cum(np);
  const double* x0 = process.slice(0);
  for (int i = 0; i < paths.n_steps(); ++i) {
    const double* a = process.slice(i);
    const double* b = process.slice(i + 1);
    for (std::size_t p = 0; p < np; ++p) {
      inc[p] = b[p] - a[p];
      cum[p] = b[p] - x0[p];
    }
    MeanStat step = mean_stat(inc);
    out.min_mean_drift = std::min(out.min_mean_drift, step.mean);
    Projector P(features.at(i), np, basis);
    P.project(inc.data(), fitted.data());
    for (double v : fitted) out.min_conditional_drift = std::min(out.min_conditional_drift, v);

    MeanStat c = mean_stat(cum);
    const double k = static_cast<double>(i + 1);
    const double margin = two_sided ? k * tol + 3.0 * c.se - std::abs(c.mean) : c.mean + k * tol + 3.0 * c.se;
    if (margin < out.worst_margin) {
      out.worst_margin = margin;
      out.worst_step = i + 1;
      out.worst_cumulative = c.mean;
      out.worst_se = c.se;
    }
  }
  out.pass = out.worst_margin >= 0.0;
  return out;
}

double bmo_diagnostic(const ProcessPath& Z, const StateFeatures& features, const RegressionBasis& basis) {
  const PathEnsemble& paths = features.paths();
  if (Z.timing() != Timing::predictable || Z.n_paths() != paths.n_paths() || Z.n_steps() != paths.n_steps())
    throw Error(ErrorCode::invalid_argument, "Z must be predictable on the ensemble grid");
  const std::size_t np = paths.n_paths();
  std::vector<double> q(np, 0.0);
  double best = 0.0;
  for (int i = paths.n_steps() - 1; i >= 0; --i) {
    Projector P(features.at(i), np, basis);
    P.project(q.data(), q.data());
    const double dt = paths.grid().dt(i);
    for (std::size_t p = 0; p < np; ++p) {
      double z2 = 0.0;
      for (int k = 0; k < Z.dim(); ++k) z2 += Z(p, i, k) * Z(p, i, k);
      q[p] += z2 * dt;
      best = std::max(best, q[p]);
    }
  }
  return best;
}

}  // namespace fbsde
