#pragma once

#include <span>
#include <vector>

#include "fbsde/core.hpp"

namespace fbsde {

// Polynomial basis of total degree <= degree on standardized state features.
struct RegressionBasis {
  int degree = 2;
  double ridge = 1e-10;
  // Eigenvalues of the normalized Gram matrix below rcond * largest are
  // discarded; with ridge == 0 that is reported as regression-singular.
  double rcond = 1e-6;
};

// Least-squares projection onto the basis evaluated at one time slice.
// Zero-variance features are dropped, so the constant is always in the span.
class Projector {
 public:
  Projector(const std::vector<const double*>& features, std::size_t n_paths, const RegressionBasis& basis);

  std::size_t size() const { return m_; }
  std::size_t n_paths() const { return n_; }
  std::size_t kept_features() const { return kept_; }

  std::vector<double> coefficients(const double* target) const;
  void predict(const std::vector<double>& coef, double* out) const;
  // out[p] = projection of target; out may alias target.
  void project(const double* target, double* out) const;

 private:
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::size_t kept_ = 0;
  std::vector<double> phi_;   // row-major n x m
  std::vector<double> pinv_;  // m x m
};

// Collects per-node state features: Brownian levels plus extra adapted
// scalar processes.
class StateFeatures {
 public:
  explicit StateFeatures(const PathEnsemble& paths, bool include_levels = true);
  StateFeatures& add(const ProcessPath& adapted_scalar);

  std::vector<const double*> at(int node) const;
  const PathEnsemble& paths() const { return *paths_; }

 private:
  const PathEnsemble* paths_;
  bool levels_;
  std::vector<const ProcessPath*> extra_;
};

std::vector<double> conditional_expectation(std::span<const double> target,
                                            const std::vector<const double*>& state, const RegressionBasis& basis);

struct Representation {
  double mean = 0.0;
  ProcessPath Z;                 // predictable, dim d
  std::vector<double> residual;  // terminal - mean - int Z.dW, per path
  double residual_rms = 0.0;
  double residual_max = 0.0;
};

// Conditional-expectation cascade of the terminal value with
// Z_i = E_i[(M_{i+1} - E_i M_{i+1}) dW_i] / dt.
Representation martingale_representation(std::span<const double> terminal, const StateFeatures& features,
                                         const RegressionBasis& basis);

struct SubmartingaleDiagnostic {
  double min_conditional_drift = 0.0;  // min over steps and paths of the regression drift estimate
  double min_mean_drift = 0.0;         // min over steps of the per-step mean increment
  double worst_margin = 0.0;           // min_k (C_k + k tol + 3 SE_k), or for two-sided min_k (k tol + 3 SE_k - |C_k|)
  int worst_step = 0;
  double worst_cumulative = 0.0;
  double worst_se = 0.0;
  bool two_sided = false;
  bool pass = false;
};

// Cumulative drift test on an adapted scalar process X: with
// C_k = mean(X_k - X_0) and SE_k its standard error, a sub-martingale passes
// when C_k >= -k tol - 3 SE_k for every k; two_sided additionally requires
// C_k <= k tol + 3 SE_k (martingale). The regression drift is reported.
SubmartingaleDiagnostic submartingale_check(const ProcessPath& process, const StateFeatures& features,
                                            const RegressionBasis& basis, double tol, bool two_sided = false);

// Heuristic estimate of sup_t || E[int_t^T |Z|^2 ds | F_t] ||_inf.
double bmo_diagnostic(const ProcessPath& Z, const StateFeatures& features, const RegressionBasis& basis);

}  // namespace fbsde
