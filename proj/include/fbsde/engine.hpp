#pragma once

#include <span>
#include <vector>

#include "fbsde/core.hpp"

namespace fbsde {

// Process filled with per-component constants.
ProcessPath constant_process(std::size_t n_paths, int n_steps, std::span<const double> values, Timing timing);

// Left-point Ito integral of a predictable integrand over components
// [first, first + integrand.dim()); value 0 at node 0.
ProcessPath ito_integral(const ProcessPath& integrand, const PathEnsemble& paths, int first_component = 0);

// Stochastic exponential M^c = exp(-int c.dW - 1/2 int |c|^2 dt) built from
// exact log-increments. c spans components [0, c.dim()).
struct Density {
  ProcessPath c;     // predictable
  ProcessPath logM;  // adapted
  ProcessPath M;     // adapted, M_0 = 1
};
Density stochastic_exponential(ProcessPath c, const PathEnsemble& paths);

// Discount D^b = exp(-int b dt).
struct Discount {
  ProcessPath b;     // predictable scalar
  ProcessPath logD;  // adapted
  ProcessPath D;     // adapted, D_0 = 1
};
Discount make_discount(ProcessPath b, const TimeGrid& grid);

// M^{bc} = D^b M^c, assembled from the log parts.
ProcessPath combined_density(const Discount& b, const Density& c);

// Returns the ensemble with hat increments dW + theta dt (tilde parts copied
// bit-wise) and records M^theta, computed on the input increments, so that
// E[M^theta_T f(shifted)] = E[f(input)].
PathEnsemble girsanov_shift(const PathEnsemble& paths, std::span<const double> theta_hat);
PathEnsemble girsanov_shift(const PathEnsemble& paths, const ProcessPath& theta_hat);

// Per-path terminal log M^{bc}_T for predictable b (scalar, may be null for 0)
// and c (any dim <= d, may be null), without storing the path.
std::vector<double> terminal_log_density(const ProcessPath* b, const ProcessPath* c, const PathEnsemble& paths);

}  // namespace fbsde
