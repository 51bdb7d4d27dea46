#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fbsde/error.hpp"

namespace fbsde {

// ---------------------------------------------------------------------------
// Time discretization

struct TimeGrid {
  double horizon = 0.0;
  int n_steps = 0;
  std::vector<double> times;  // n_steps + 1 nodes, times[0] = 0, times.back() = horizon

  double t(int i) const { return times[static_cast<std::size_t>(i)]; }
  double dt(int i) const { return times[static_cast<std::size_t>(i) + 1] - times[static_cast<std::size_t>(i)]; }
  bool uniform() const;
};

TimeGrid make_uniform_grid(double horizon, int n_steps);
// Explicit non-uniform grid; nodes must be strictly increasing from 0.
TimeGrid make_grid(std::vector<double> times);

// ---------------------------------------------------------------------------
// Per-path processes. Storage is step-major so that a single time slice over
// all paths is contiguous: value(p, i, k) lives at ((i * dim) + k) * n_paths + p.

enum class Timing { adapted, predictable };

class ProcessPath {
 public:
  ProcessPath() = default;
  ProcessPath(std::size_t n_paths, int n_steps, int dim, Timing timing, double fill = 0.0);

  std::size_t n_paths() const { return n_paths_; }
  int n_steps() const { return n_steps_; }
  int dim() const { return dim_; }
  Timing timing() const { return timing_; }
  // Number of time slices: n_steps + 1 for adapted, n_steps for predictable.
  int length() const { return timing_ == Timing::adapted ? n_steps_ + 1 : n_steps_; }
  bool empty() const { return values_.empty(); }

  double* slice(int i, int k = 0) { return values_.data() + offset(i, k); }
  const double* slice(int i, int k = 0) const { return values_.data() + offset(i, k); }
  double& operator()(std::size_t p, int i, int k = 0) { return values_[offset(i, k) + p]; }
  double operator()(std::size_t p, int i, int k = 0) const { return values_[offset(i, k) + p]; }

  std::vector<double>& data() { return values_; }
  const std::vector<double>& data() const { return values_; }

  bool same_shape(const ProcessPath& o) const {
    return n_paths_ == o.n_paths_ && n_steps_ == o.n_steps_ && dim_ == o.dim_ && timing_ == o.timing_;
  }

 private:
  std::size_t offset(int i, int k) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(k)) * n_paths_;
  }

  std::size_t n_paths_ = 0;
  int n_steps_ = 0;
  int dim_ = 0;
  Timing timing_ = Timing::adapted;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Brownian path ensemble. Components 0..n-1 are the traded (hat) part and
// n..d-1 the untraded (tilde) part.

class PathEnsemble {
 public:
  PathEnsemble(TimeGrid grid, int d, int n, std::uint64_t seed, ProcessPath increments);

  const TimeGrid& grid() const { return grid_; }
  int d() const { return d_; }
  int n() const { return n_; }
  std::size_t n_paths() const { return increments_.n_paths(); }
  int n_steps() const { return grid_.n_steps; }
  std::uint64_t seed() const { return seed_; }

  const ProcessPath& increments() const { return increments_; }
  const ProcessPath& levels() const { return levels_; }
  const double* dW(int i, int k) const { return increments_.slice(i, k); }
  const double* W(int i, int k) const { return levels_.slice(i, k); }

  // Density recorded by girsanov_shift (adapted, scalar); null otherwise.
  const ProcessPath* shift_density() const { return shift_density_.get(); }
  void set_shift_density(std::shared_ptr<const ProcessPath> m) { shift_density_ = std::move(m); }

 private:
  TimeGrid grid_;
  int d_ = 0;
  int n_ = 0;
  std::uint64_t seed_ = 0;
  ProcessPath increments_;
  ProcessPath levels_;
  std::shared_ptr<const ProcessPath> shift_density_;
};

// Path p uses the counter-based stream keyed by (seed, p); the draw for
// (step i, components 2j and 2j+1) comes from counter block j.
PathEnsemble simulate_brownian(const TimeGrid& grid, int d, int n, std::size_t n_paths, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Market model with constant coefficients.

struct MarketModel {
  int d = 1;                                   // Brownian dimension
  int n = 1;                                   // traded assets
  double horizon = 1.0;
  std::vector<double> mu;                      // drift, length n
  std::vector<std::vector<double>> sigma;      // n x n, invertible
  std::vector<double> s0;                      // initial prices, positive
  double mu_bound = 0.0;                       // declared bound on |mu|
  std::vector<double> theta_hat;               // sigma^{-1} mu
  std::vector<double> theta_complement;        // market price of risk on untraded components (pricing only)

  std::vector<double> theta_full() const;
};

// Validates dimensions, invertibility (reciprocal condition >= 1e-12) and the
// drift bound, and computes theta_hat. sigma empty means identity, s0 empty
// means all ones, mu_bound <= 0 means |mu| itself.
MarketModel make_market(int d, int n, double horizon, std::vector<double> mu,
                        std::vector<std::vector<double>> sigma = {}, std::vector<double> s0 = {},
                        double mu_bound = 0.0, std::vector<double> theta_complement = {});

// ---------------------------------------------------------------------------
// Bounded terminal claims on a single Brownian component.

enum class ClaimKind { constant, clipped_linear_terminal, tanh_terminal, call_spread };

struct Claim {
  ClaimKind kind = ClaimKind::constant;
  double value = 0.0;        // constant
  double slope = 1.0;        // clipped_linear_terminal
  double clip = 1.0;         // clipped_linear_terminal
  double scale = 1.0;        // tanh_terminal: tanh(scale * w)
  double amplitude = 1.0;    // tanh_terminal: amplitude * tanh(...)
  double strike_low = 0.0;   // call_spread
  double strike_high = 1.0;  // call_spread
  int component = 0;

  double bound() const;
  double payoff(double w_terminal) const;
  bool depends_on_paths() const { return kind != ClaimKind::constant; }
};

ClaimKind claim_kind_from_string(const std::string& s);
std::string to_string(ClaimKind k);

// Terminal values per path. drift[k] is subtracted per unit time from the
// simulated component k (W_T - drift_k * T), which maps a simulated shifted
// Brownian motion back to the physical one.
std::vector<double> evaluate_claim(const Claim& claim, const PathEnsemble& paths,
                                   std::span<const double> drift = {});

// Payoff at the current level of the claim's component (W_t - drift t) on
// every node. Used as a regression feature; empty for constant claims.
ProcessPath claim_levels(const Claim& claim, const PathEnsemble& paths, std::span<const double> drift = {});

// E[f(G)] for G ~ N(mean, variance) by composite Simpson quadrature on
// mean +/- 12 standard deviations.
double gaussian_expectation(const std::function<double(double)>& f, double mean, double variance);

// E[payoff(W_T)] for W_T ~ N(mean, variance).
double claim_expectation(const Claim& claim, double mean, double variance);

}  // namespace fbsde
