#pragma once

#include <span>
#include <string>
#include <vector>

#include "fbsde/core.hpp"
#include "fbsde/generators.hpp"
#include "fbsde/regression.hpp"
#include "fbsde/scenario.hpp"

namespace fbsde {

struct BsdeOptions {
  RegressionBasis basis;
  int inner_max_iter = 50;
  double inner_tol = 1e-12;
  bool store_k = false;  // keep the full K path in SubSolution
};

// Solution of dY = g(X + Y, Z + pi) dt + Z.dW, Y_T = F for a fixed strategy.
struct SubSolution {
  ProcessPath Y;  // adapted
  ProcessPath Z;  // predictable, dim d
  ProcessPath K;  // adapted, only when store_k
  double y0 = 0.0;
  double y0_se = 0.0;
  // F - sum g dt per path; its mean is y0 and its spread gives y0_se.
  std::vector<double> pathwise;
  // K_T = F - Y_0 - sum g dt - sum Z dW per path.
  double k_terminal_mean = 0.0;
  double k_terminal_se = 0.0;
  double k_terminal_rms = 0.0;
  double k_min_increment = 0.0;
  double k_max_increment = 0.0;
};

// X_{i+1} = X_i + pi_i . dW_hat_i; pi may be null (X = x0).
ProcessPath forward_wealth(double x0, const ProcessPath* pi, const PathEnsemble& paths);

// Backward Euler with regression. Features: Brownian levels, X and extra.
SubSolution solve_bsde_fixed_strategy(const Generator& g, std::span<const double> terminal,
                                      const PathEnsemble& paths, const ProcessPath* pi, const ProcessPath& X,
                                      const BsdeOptions& opts,
                                      const std::vector<const ProcessPath*>& extra_features = {});

struct AuxSolution {
  ProcessPath U;                 // adapted
  ProcessPath V;                 // predictable, dim d
  double u0 = 0.0;
  std::vector<double> residual;  // U_T - U_0 + 1/2 sum (|Vhat|^2 - |Vtilde|^2) dt + sum V.dW
  double residual_rms = 0.0;
};

// dU = -1/2 (|Vhat|^2 - |Vtilde|^2) dt - V.dW with
// U_T = sum (b + |c_tilde|^2 / 2) dt + sum c_tilde . dW_tilde.
// c_tilde has d - n components (null when n == d).
AuxSolution solve_auxiliary_bsde(const ProcessPath& b, const ProcessPath* c_tilde, const PathEnsemble& paths,
                                 const RegressionBasis& basis,
                                 const std::vector<const ProcessPath*>& extra_features = {});

struct SolverOptions {
  BsdeOptions bsde;
  int max_iter = 60;
  double damping = 0.5;
  double tol_y0 = 1e-6;
  double tol_path = 1e-5;
};
SolverOptions solver_options(const Numerics& n);

struct FBSDESolution {
  double x0 = 0.0;
  ProcessPath X, Y, Z, U, V;
  ProcessPath pi_star;  // predictable, dim n
  ProcessPath b_star;   // predictable scalar
  ProcessPath c_star;   // predictable, dim d
  ProcessPath a_star;   // predictable scalar
  double y0 = 0.0;
  double y0_se = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string status;
  std::vector<double> y0_history;
  std::vector<double> path_change_history;
  double optimizer_residual = 0.0;      // max |d_zhat g(X+Y, Z+pi) - Vhat|
  double forward_residual = 0.0;  // max |X - x - sum pi dW_hat|
  double terminal_residual_rms = 0.0;
  double touching_residual = 0.0;  // max |g - (b s + c.w - g*)|
};

// Damped Picard iteration on the coupled system.
// Regression features: Brownian levels, X and extra_features.
FBSDESolution picard_solve(const Generator& g, std::span<const double> terminal, const PathEnsemble& paths,
                           double x0, const SolverOptions& opts,
                           const std::vector<const ProcessPath*>& extra_features = {});

// b*, c*, a* at (X + Y, Z + pi).
void fill_optimal_coefficients(const Generator& g, FBSDESolution& sol, const PathEnsemble& paths);

// optimizer_residual and forward_residual from the stored paths.
void fill_solution_residuals(FBSDESolution& sol, const PathEnsemble& paths);

struct StrategyUtility {
  double value = 0.0;    // E(pi) = Y_0
  double utility = 0.0;  // E(pi) + x
  double se = 0.0;
  std::vector<double> pathwise;
};
StrategyUtility utility_of_strategy(const Generator& g, std::span<const double> terminal, const PathEnsemble& paths,
                                    const ProcessPath* pi, double x0, const BsdeOptions& opts,
                                    const std::vector<const ProcessPath*>& extra_features = {});

// Path-wise F - Y_0 - sum g(X+Y, Z+pi) dt - sum Z.dW.
struct SystemResidual {
  double rms = 0.0;
  double max = 0.0;
  double terminal_mismatch_rms = 0.0;  // Y_T - F
};
SystemResidual bsde_residual(const Generator& g, std::span<const double> terminal, const PathEnsemble& paths,
                             const ProcessPath& X, const ProcessPath& Y, const ProcessPath& Z, const ProcessPath* pi);

enum class Dynamics { raw, market };

// Ensemble, generator and terminal values of a scenario. In market mode the
// simulated increments are those of W^theta_hat, the generator is shifted by
// theta_hat and the claim is read on W = W^theta_hat - theta_hat t.
struct Problem {
  Generator g;
  PathEnsemble paths;
  std::vector<double> terminal;
  double x0 = 0.0;
  Dynamics dynamics = Dynamics::market;
  ProcessPath claim_level;  // claim payoff at the current level, empty for constant claims

  std::vector<const ProcessPath*> features() const {
    if (claim_level.empty()) return {};
    return {&claim_level};
  }
};
Problem make_problem(const Scenario& sc, Dynamics dynamics = Dynamics::market);

}  // namespace fbsde
