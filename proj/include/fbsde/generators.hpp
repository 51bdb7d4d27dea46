#pragma once

#include <span>
#include <string>
#include <vector>

#include "fbsde/core.hpp"

namespace fbsde {

struct GeneratorSpec;

enum class GeneratorKind { quadratic_discount, exponential_ce, power_ce, recursive_kp, exp_quadratic };

std::string to_string(GeneratorKind k);

// Upper bound on the Brownian dimension handled by generator evaluations.
inline constexpr int kMaxDim = 16;

// Convex generator g(y, z) on R x R^d, optionally shifted by a market price
// of risk: g(y, z) = h(y, z) - zhat . theta_hat where zhat is the first
// theta_hat.size() components of z.
class Generator {
 public:
  static Generator quadratic_discount(double beta, double gamma, int d);
  static Generator exponential_ce(int d);
  static Generator power_ce(double r, int d);
  // h(y) = k (y - c y^q) with k = beta alpha / rho, q = 1 - rho / alpha,
  // c = consumption^rho / alpha^(rho / alpha).
  static Generator recursive_kp(double alpha, double rho, double beta, double consumption, int d);
  static Generator exp_quadratic(int d);
  static Generator from_spec(const GeneratorSpec& spec, int d);

  GeneratorKind kind() const { return kind_; }
  int d() const { return d_; }
  // Number of shifted (traded) components; 0 when untransformed.
  int n() const { return static_cast<int>(theta_.size()); }
  const std::vector<double>& theta() const { return theta_; }

  double beta() const { return beta_; }
  double gamma() const { return gamma_; }
  double r() const { return r_; }
  double recursive_rate() const { return k_; }
  double recursive_power() const { return q_; }
  double recursive_level() const { return c_; }

  // +inf outside the domain.
  double value(double y, std::span<const double> z) const;
  bool in_domain(double y, std::span<const double> z) const;
  // Closed-form Fenchel conjugate sup_{y,z} {b y + c.z - g(y,z)}; +inf off its domain.
  double conjugate(double b, std::span<const double> c) const;
  bool conjugate_in_domain(double b, std::span<const double> c) const;

  // Gradient at an interior point; no-gradient otherwise.
  double dy(double y, std::span<const double> z) const;
  void dz(double y, std::span<const double> z, std::span<double> out) const;

  // Point-wise optimizer: solves d_zhat g(y, z + (eta, 0)) = v_hat.
  void pointwise_optimizer(double y, std::span<const double> z, std::span<const double> v_hat, std::span<double> out) const;

  bool strictly_convex_in_z() const { return kind_ != GeneratorKind::recursive_kp; }

 private:
  friend Generator market_transform(const Generator& h, std::vector<double> theta_hat);

  Generator(GeneratorKind kind, int d) : kind_(kind), d_(d) {}
  double raw_value(double y, std::span<const double> z) const;
  double raw_conjugate(double b, std::span<const double> c) const;

  GeneratorKind kind_;
  int d_;
  double beta_ = 0.0, gamma_ = 1.0, r_ = 0.5;
  double k_ = 0.0, q_ = 0.0, c_ = 0.0;  // recursive_kp
  std::vector<double> theta_;
};

// g(y, z) = h(y, z) - zhat . theta_hat. Transforming an already shifted
// generator adds the shifts.
Generator market_transform(const Generator& h, std::vector<double> theta_hat);

std::vector<double> pointwise_optimizer(const Generator& g, double y, std::span<const double> z, std::span<const double> v_hat);

// Safeguarded Newton on the gradient equation with finite-difference
// Jacobian; independent cross-check of the closed forms.
std::vector<double> pointwise_optimizer_newton(const Generator& g, double y, std::span<const double> z,
                                   std::span<const double> v_hat, std::vector<double> start = {});

// Transformed driver of the variable change Ybar = M Y + A, Zbar = M Z - M Y c
// with A = int M a dt:
//   M [ g(X + Y, Z + pi) - b Y - c.Z + a ]
// where Y = (ybar - A) / M and Z = (zbar + (ybar - A) c) / M.
double driver_change(const Generator& g, double b, std::span<const double> c, double a, double M, double A,
                     double x_pi, std::span<const double> pi_hat, double ybar, std::span<const double> zbar);

struct OptimalCoefficients {
  double b = 0.0;
  std::vector<double> c;
  double conjugate = 0.0;          // g*(b, c)
  double touching_residual = 0.0;  // g(s, w) - (b s + c.w - g*(b, c))
};

// Gradient coefficients at the point (s, w) = (x + y, z + pi).
OptimalCoefficients extract_optimal_coefficients(const Generator& g, double s, std::span<const double> w);

// a* = g*(b*, c*) - chat* . pi - b* X.
double optimal_shift(const OptimalCoefficients& coef, std::span<const double> pi_hat, double x);

}  // namespace fbsde
