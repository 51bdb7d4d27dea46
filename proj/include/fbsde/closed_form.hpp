#pragma once

#include <vector>

#include "fbsde/core.hpp"
#include "fbsde/scenario.hpp"
#include "fbsde/solver.hpp"

namespace fbsde {

// Constant coefficients of h(y, z) = beta y + |z|^2 / (2 gamma) and the market
// price of risk on all d components (traded part first).
struct QuadraticParams {
  double beta = 0.0;
  double gamma = 1.0;
  std::vector<double> theta;
};
QuadraticParams quadratic_params(const Scenario& sc);

// int_{t0}^{t1} exp(-beta s) ds.
double discount_weight(double beta, double t0, double t1);

struct CompleteQuadratic {
  Problem problem;  // market-mode ensemble, generator and claim
  FBSDESolution solution;
  double C = 0.0;  // analytic utility constant
  double C_mc = 0.0;
  double C_mc_se = 0.0;
  double utility = 0.0;  // = C
  double budget_mean = 0.0;  // mean of the target X_T under the shifted measure
  double budget_se = 0.0;
  double representation_rms = 0.0;
};
CompleteQuadratic solve_complete_quadratic(const Scenario& sc);

struct IncompleteQuadratic {
  Problem problem;
  FBSDESolution solution;
  double utility = 0.0;  // value process at time 0
  double utility_se = 0.0;
  double penalty = 0.0;  // E sum |Gamma_tilde|^2 / (2 gamma D) dt
  double penalty_se = 0.0;
  double complete_value = 0.0;  // D_T (x + E F) + int D gamma |theta_hat|^2 / 2 dt on the same ensemble
  double complete_value_se = 0.0;
  double representation_rms = 0.0;
  // System residual RMS of the strategy normalized by D_T and by D_t.
  double residual_terminal_discount = 0.0;
  double residual_running_discount = 0.0;
};
IncompleteQuadratic solve_incomplete_quadratic(const Scenario& sc);

struct PriceReport {
  double discount_T = 1.0;
  double utility_claim = 0.0;  // U(F): untransformed generator, no trading, physical measure
  double utility_claim_se = 0.0;
  double complete_value = 0.0;  // E^theta[D_T F] + int D gamma |theta|^2 / 2 dt
  double complete_value_se = 0.0;
  double incomplete_value = 0.0;  // value process at time 0 with x = 0
  double incomplete_value_se = 0.0;
  double penalty = 0.0;
  double penalty_se = 0.0;
  double x_star = 0.0, x_star_se = 0.0;
  double y_star = 0.0, y_star_se = 0.0;
  double cost = 0.0;  // y* - x*
  double cost_se = 0.0;         // independent-error bound
  double cost_se_paired = 0.0;  // same-ensemble estimate
};
PriceReport indifference_prices(const Scenario& sc);

// Classical RK4 backward from phi(T) = terminal for phi' = k (phi - level phi^power).
// Throws domain-violation if phi leaves (0, inf).
std::vector<double> integrate_recursive_ode(double rate, double level, double power, double terminal,
                                            const TimeGrid& grid);

struct RecursiveUtility {
  Problem problem;
  FBSDESolution solution;
  std::vector<double> phi;  // on the grid nodes
  double representation_rms = 0.0;
  double representation_max = 0.0;
  double consistency_max = 0.0;  // max |X + Y - phi|
};
RecursiveUtility solve_recursive_utility(const Scenario& sc);

struct ExponentialExample {
  Problem problem;
  FBSDESolution solution;
  double y_hat0 = 0.0;
  double z_hat2_rms = 0.0;  // RMS of the untraded coefficient of the first BSDE
  double z_hat2_max = 0.0;
  double representation_rms = 0.0;
  double residual_y_rms = 0.0;  // accumulated discrete residual of the Y equation
  double residual_u_rms = 0.0;  // same for the U equation
  double residual_rms = 0.0;    // max of the two
  double threshold = 0.0;       // 5 dt
};
// h(y, z) = e^y + |z|^2 / 2 with d = 2, n = 1.
ExponentialExample solve_exponential_example(const Scenario& sc);

}  // namespace fbsde
