#include "fbsde/core.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "fbsde/parallel.hpp"
#include "fbsde/rng.hpp"

namespace fbsde {

bool TimeGrid::uniform() const {
  if (n_steps < 1) return false;
  const double h = horizon / n_steps;
  for (int i = 0; i < n_steps; ++i)
    if (std::abs(dt(i) - h) > 1e-12 * std::max(1.0, horizon)) return false;
  return true;
}

TimeGrid make_uniform_grid(double horizon, int n_steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw Error(ErrorCode::invalid_argument, "horizon must be positive and finite");
  if (n_steps < 1) throw Error(ErrorCode::invalid_argument, "n_steps must be at least 1");
  TimeGrid g;
  g.horizon = horizon;
  g.n_steps = n_steps;
  g.times.resize(static_cast<std::size_t>(n_steps) + 1);
  for (int i = 0; i <= n_steps; ++i) g.times[static_cast<std::size_t>(i)] = horizon * i / n_steps;
  g.times.back() = horizon;
  return g;
}

TimeGrid make_grid(std::vector<double> times) {
  if (times.size() < 2) throw Error(ErrorCode::invalid_argument, "grid needs at least two nodes");
  if (times.front() != 0.0) throw Error(ErrorCode::invalid_argument, "grid must start at 0");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw Error(ErrorCode::invalid_argument, "grid must be strictly increasing");
  TimeGrid g;
  g.horizon = times.back();
  g.n_steps = static_cast<int>(times.size()) - 1;
  g.times = std::move(times);
  return g;
}

ProcessPath::ProcessPath(std::size_t n_paths, int n_steps, int dim, Timing timing, double fill)
    : n_paths_(n_paths), n_steps_(n_steps), dim_(dim), timing_(timing) {
  if (n_steps < 1 || dim < 0) throw Error(ErrorCode::invalid_argument, "bad process shape");
  values_.assign(static_cast<std::size_t>(length()) * static_cast<std::size_t>(dim) * n_paths, fill);
}

PathEnsemble::PathEnsemble(TimeGrid grid, int d, int n, std::uint64_t seed, ProcessPath increments)
    : grid_(std::move(grid)), d_(d), n_(n), seed_(seed), increments_(std::move(increments)) {
  if (n < 1 || n > d) throw Error(ErrorCode::invalid_split, "need 1 <= n <= d");
  if (increments_.timing() != Timing::predictable || increments_.dim() != d ||
      increments_.n_steps() != grid_.n_steps)
    throw Error(ErrorCode::invalid_argument, "increment shape does not match grid");
  const std::size_t np = increments_.n_paths();
  levels_ = ProcessPath(np, grid_.n_steps, d, Timing::adapted);
  for (int i = 0; i < grid_.n_steps; ++i)
    for (int k = 0; k < d; ++k) {
      const double* w = levels_.slice(i, k);
      const double* dw = increments_.slice(i, k);
      double* next = levels_.slice(i + 1, k);
      for (std::size_t p = 0; p < np; ++p) next[p] = w[p] + dw[p];
    }
}

PathEnsemble simulate_brownian(const TimeGrid& grid, int d, int n, std::size_t n_paths, std::uint64_t seed) {
  if (n > d) throw Error(ErrorCode::invalid_split, "traded dimension n exceeds d");
  if (n < 1) throw Error(ErrorCode::invalid_split, "traded dimension n must be at least 1");
  if (n_paths < 1) throw Error(ErrorCode::invalid_argument, "n_paths must be at least 1");
  ProcessPath inc(n_paths, grid.n_steps, d, Timing::predictable);
  std::vector<double> sq(static_cast<std::size_t>(grid.n_steps));
  for (int i = 0; i < grid.n_steps; ++i) sq[static_cast<std::size_t>(i)] = std::sqrt(grid.dt(i));
  const int blocks = (d + 1) / 2;
  parallel_chunks(n_paths, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t p = b; p < e; ++p) {
      CounterRng rng(seed, p);
      for (int i = 0; i < grid.n_steps; ++i)
        for (int j = 0; j < blocks; ++j) {
          auto z = rng.normals(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
          inc(p, i, 2 * j) = sq[static_cast<std::size_t>(i)] * z[0];
          if (2 * j + 1 < d) inc(p, i, 2 * j + 1) = sq[static_cast<std::size_t>(i)] * z[1];
        }
    }
  });
  return PathEnsemble(grid, d, n, seed, std::move(inc));
}

std::vector<double> MarketModel::theta_full() const {
  std::vector<double> t = theta_hat;
  for (int k = n; k < d; ++k) {
    const auto idx = static_cast<std::size_t>(k - n);
    t.push_back(idx < theta_complement.size() ? theta_complement[idx] : 0.0);
  }
  return t;
}

MarketModel make_market(int d, int n, double horizon, std::vector<double> mu,
                        std::vector<std::vector<double>> sigma, std::vector<double> s0, double mu_bound,
                        std::vector<double> theta_complement) {
  if (n < 1 || n > d) throw Error(ErrorCode::invalid_split, "need 1 <= n <= d");
  if (!(horizon > 0.0)) throw Error(ErrorCode::invalid_argument, "horizon must be positive");
  const auto nn = static_cast<std::size_t>(n);
  if (mu.size() != nn) throw Error(ErrorCode::invalid_argument, "mu must have length n");
  if (sigma.empty()) {
    sigma.assign(nn, std::vector<double>(nn, 0.0));
    for (std::size_t k = 0; k < nn; ++k) sigma[k][k] = 1.0;
  }
  if (sigma.size() != nn) throw Error(ErrorCode::invalid_argument, "sigma must be n x n");
  Eigen::MatrixXd S(n, n);
  for (std::size_t r = 0; r < nn; ++r) {
    if (sigma[r].size() != nn) throw Error(ErrorCode::invalid_argument, "sigma must be n x n");
    for (std::size_t c = 0; c < nn; ++c) S(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = sigma[r][c];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(S);
  const auto& sv = svd.singularValues();
  const double rcond = sv.size() ? sv(sv.size() - 1) / sv(0) : 0.0;
  if (!(sv(0) > 0.0) || !(rcond >= 1e-12))
    throw Error(ErrorCode::invalid_argument, "sigma is singular (reciprocal condition < 1e-12)");
  Eigen::VectorXd m(n);
  double mu_norm = 0.0;
  for (std::size_t k = 0; k < nn; ++k) {
    m(static_cast<Eigen::Index>(k)) = mu[k];
    mu_norm += mu[k] * mu[k];
  }
  mu_norm = std::sqrt(mu_norm);
  if (mu_bound <= 0.0) mu_bound = mu_norm;
  if (mu_norm > mu_bound * (1.0 + 1e-12)) throw Error(ErrorCode::invalid_argument, "|mu| exceeds declared bound");
  Eigen::VectorXd th = S.partialPivLu().solve(m);
  if (s0.empty()) s0.assign(nn, 1.0);
  if (s0.size() != nn) throw Error(ErrorCode::invalid_argument, "s0 must have length n");
  for (double v : s0)
    if (!(v > 0.0)) throw Error(ErrorCode::invalid_argument, "initial prices must be positive");
  if (theta_complement.empty()) theta_complement.assign(static_cast<std::size_t>(d - n), 0.0);
  if (theta_complement.size() != static_cast<std::size_t>(d - n))
    throw Error(ErrorCode::invalid_argument, "theta_complement must have length d - n");

  MarketModel mk;
  mk.d = d;
  mk.n = n;
  mk.horizon = horizon;
  mk.mu = std::move(mu);
  mk.sigma = std::move(sigma);
  mk.s0 = std::move(s0);
  mk.mu_bound = mu_bound;
  mk.theta_hat.assign(th.data(), th.data() + n);
  mk.theta_complement = std::move(theta_complement);
  return mk;
}

double Claim::bound() const {
  switch (kind) {
    case ClaimKind::constant: return std::abs(value);
    case ClaimKind::clipped_linear_terminal: return std::abs(clip);
    case ClaimKind::tanh_terminal: return std::abs(amplitude);
    case ClaimKind::call_spread: return std::max(0.0, strike_high - strike_low);
  }
  throw Error(ErrorCode::unsupported_claim, "unknown claim kind");
}

double Claim::payoff(double w) const {
  switch (kind) {
    case ClaimKind::constant: return value;
    case ClaimKind::clipped_linear_terminal: {
      const double c = std::abs(clip);
      return std::clamp(slope * w, -c, c);
    }
    case ClaimKind::tanh_terminal: return amplitude * std::tanh(scale * w);
    case ClaimKind::call_spread:
      if (strike_high <= strike_low) return 0.0;
      return std::clamp(w - strike_low, 0.0, strike_high - strike_low);
  }
  throw Error(ErrorCode::unsupported_claim, "unknown claim kind");
}

ClaimKind claim_kind_from_string(const std::string& s) {
  if (s == "constant") return ClaimKind::constant;
  if (s == "clipped_linear_terminal") return ClaimKind::clipped_linear_terminal;
  if (s == "tanh_terminal") return ClaimKind::tanh_terminal;
  if (s == "call_spread") return ClaimKind::call_spread;
  throw Error(ErrorCode::unsupported_claim, "unknown claim kind '" + s + "'");
}

std::string to_string(ClaimKind k) {
  switch (k) {
    case ClaimKind::constant: return "constant";
    case ClaimKind::clipped_linear_terminal: return "clipped_linear_terminal";
    case ClaimKind::tanh_terminal: return "tanh_terminal";
    case ClaimKind::call_spread: return "call_spread";
  }
  return "unknown";
}

std::vector<double> evaluate_claim(const Claim& claim, const PathEnsemble& paths, std::span<const double> drift) {
  const std::size_t np = paths.n_paths();
  std::vector<double> out(np);
  if (claim.kind == ClaimKind::constant) {
    std::fill(out.begin(), out.end(), claim.value);
    return out;
  }
  if (claim.component < 0 || claim.component >= paths.d())
    throw Error(ErrorCode::invalid_argument, "claim component outside Brownian dimension");
  const auto k = static_cast<std::size_t>(claim.component);
  const double shift = k < drift.size() ? drift[k] * paths.grid().horizon : 0.0;
  const double* wT = paths.W(paths.n_steps(), claim.component);
  for (std::size_t p = 0; p < np; ++p) out[p] = claim.payoff(wT[p] - shift);
  return out;
}

ProcessPath claim_levels(const Claim& claim, const PathEnsemble& paths, std::span<const double> drift) {
  if (claim.kind == ClaimKind::constant) return {};
  if (claim.component < 0 || claim.component >= paths.d())
    throw Error(ErrorCode::invalid_argument, "claim component outside Brownian dimension");
  const auto k = static_cast<std::size_t>(claim.component);
  const double rate = k < drift.size() ? drift[k] : 0.0;
  const int N = paths.n_steps();
  ProcessPath out(paths.n_paths(), N, 1, Timing::adapted);
  for (int i = 0; i <= N; ++i) {
    const double shift = rate * paths.grid().t(i);
    const double* w = paths.W(i, claim.component);
    double* o = out.slice(i);
    for (std::size_t p = 0; p < paths.n_paths(); ++p) o[p] = claim.payoff(w[p] - shift);
  }
  return out;
}

double gaussian_expectation(const std::function<double(double)>& f, double mean, double variance) {
  if (variance <= 0.0) return f(mean);
  const double sd = std::sqrt(variance);
  constexpr int kIntervals = 24000;  // even
  const double a = -12.0, h = 24.0 / kIntervals;
  const double norm = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
  double acc = 0.0;
  for (int j = 0; j <= kIntervals; ++j) {
    const double u = a + j * h;
    const double w = (j == 0 || j == kIntervals) ? 1.0 : (j % 2 ? 4.0 : 2.0);
    acc += w * f(mean + sd * u) * norm * std::exp(-0.5 * u * u);
  }
  return acc * h / 3.0;
}

double claim_expectation(const Claim& claim, double mean, double variance) {
  if (claim.kind == ClaimKind::constant) return claim.value;
  return gaussian_expectation([&](double w) { return claim.payoff(w); }, mean, variance);
}

}  // namespace fbsde
