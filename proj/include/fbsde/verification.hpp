#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fbsde/core.hpp"
#include "fbsde/generators.hpp"
#include "fbsde/regression.hpp"
#include "fbsde/scenario.hpp"
#include "fbsde/solver.hpp"

namespace fbsde {

// One numerical check. pass requires the main statistic to meet its rule and
// the negative control (a deliberately corrupted input) to be detected.
struct Check {
  std::string name;
  std::string rule;
  double statistic = 0.0;
  double se = 0.0;
  double threshold = 0.0;
  bool main_pass = false;
  double control_statistic = 0.0;
  bool control_detected = false;
  bool pass = false;
  std::size_t n_paths = 0;
  std::vector<std::pair<std::string, double>> details;

  void finish() { pass = main_pass && control_detected; }
  json to_json() const;
};

struct VerificationReport {
  std::vector<Check> checks;
  bool verdict = false;

  void add(Check c) {
    checks.push_back(std::move(c));
    verdict = true;
    for (const Check& k : checks) verdict = verdict && k.pass;
  }
  const Check* find(const std::string& name) const;
  json to_json() const;
};

// |E[M^{b*c*}_T int pi . dW_hat]| <= 3 SE for constants, a step at T/2 and
// sign(W_hat); control adds 0.5 to c_hat*.
Check verify_orthogonality(const FBSDESolution& sol, const PathEnsemble& paths);

struct OptimalityOptions {
  BsdeOptions bsde;
  int perturbations = 20;
  std::uint64_t seed = 42;
  std::vector<const ProcessPath*> features;
};

// Bounded adapted perturbation a + b sign(W_hat_t) + c 1{t >= s} with
// coefficients drawn from the counter-based stream (seed, index).
ProcessPath perturbation_direction(const PathEnsemble& paths, int n, std::uint64_t seed, std::uint64_t index);

// E(pi*) >= E(pi* + m delta_k) - 3 SE for m cycling 0.1, -0.1, 0.5, -0.5,
// concavity of m -> E(pi* + m delta) and a central derivative within 3 SE + 5 dt; control
// replaces pi* by 2 pi* (pi* + 1 when pi* vanishes).
Check verify_optimality(const Generator& g, std::span<const double> terminal, const PathEnsemble& paths,
                        const FBSDESolution& sol, const OptimalityOptions& opts);

// Path-wise M^{bc}_T with c = (V_hat, c_tilde) against
// exp(-1/2 int |V_tilde|^2 dt + int V_tilde dW_tilde - U_0); median relative
// error <= 5 dt. Control shifts U_0 by max(0.1, log(1 + 20 dt)).
Check verify_density_identity(const ProcessPath& U, const ProcessPath& V, const ProcessPath& b,
                              const ProcessPath* c_tilde, const PathEnsemble& paths);

// E[M^{bc}_t int_0^t pi dW_hat] = -E[int_0^t M^{bc} (c_hat . pi + b int pi dW_hat) ds] on
// paired paths at node t_index. With analytic set, the left side is also
// compared with it. Control adds 0.5 to c_hat on the left side.
Check verify_integration_by_parts(const ProcessPath& b, const ProcessPath& c, const ProcessPath& pi, const PathEnsemble& paths,
                      int t_index, const double* analytic = nullptr);

// Fenchel-Young slack g(X + y, z + pi) - [b y + c.z - (g*(b, c) - c_hat.pi - b X)]
// and the driver change with the matching shift a, both on random interior
// points; plus gradient against central differences. Control uses a + 1.
Check verify_young(const Generator& g, std::size_t samples, std::uint64_t seed);

struct SubmartingaleOptions {
  RegressionBasis basis;
  double epsilon = 0.1;
  std::vector<const ProcessPath*> features;
};

// N = M^{bc} Y - Y_0 - int M^{bc} (g(X + Y, Z + pi) - b Y - c.Z) dt must have
// zero drift (two-sided, tolerance epsilon dt / 4 per step). Y + epsilon (T - t)
// must fail and Y - epsilon (T - t) must pass the one-sided test.
Check verify_submartingale_control(const Generator& g, const FBSDESolution& sol, const PathEnsemble& paths,
                                   const SubmartingaleOptions& opts);

// Y*_0 against E[M^{b*c*}_T F + int M^{b*c*} a* dt] within max(3 SE, 5e-3);
// control adds 0.1 to a*.
Check verify_linear_representation(const FBSDESolution& sol, std::span<const double> terminal,
                                   const PathEnsemble& paths);

// max |V_hat - d_zhat g(X + Y, Z + pi)| <= threshold; requires a converged
// solution. Control adds 0.1 to V_hat.
Check verify_pointwise_gradient(const Generator& g, const FBSDESolution& sol, const PathEnsemble& paths,
                                double threshold);

// max |X - x - sum pi dW_hat| <= 1e-12 (1 + max |X|); control shifts X by 1e-6.
Check verify_forward_consistency(const FBSDESolution& sol, const PathEnsemble& paths);

struct VerifyOptions {
  RegressionBasis basis;
  int perturbations = 20;
  std::uint64_t seed = 42;
  double gradient_threshold = 1e-4;
  std::size_t young_samples = 10000;
};
VerifyOptions verify_options(const Numerics& n);

// Runs every check on a candidate solution of the problem. b*, c*, a* are
// recomputed from (X, Y, Z, pi*).
VerificationReport verify_solution(const Problem& problem, FBSDESolution sol, const VerifyOptions& opts);

}  // namespace fbsde
