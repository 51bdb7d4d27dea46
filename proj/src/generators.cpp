#include "fbsde/generators.hpp"

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>

#include "fbsde/scenario.hpp"

namespace fbsde {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sq_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

void check_dim(const Generator& g, std::size_t size) {
  if (static_cast<int>(size) != g.d()) throw Error(ErrorCode::invalid_argument, "vector length must equal d");
}

}  // namespace

std::string to_string(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::quadratic_discount: return "quadratic_discount";
    case GeneratorKind::exponential_ce: return "exponential_ce";
    case GeneratorKind::power_ce: return "power_ce";
    case GeneratorKind::recursive_kp: return "recursive_kp";
    case GeneratorKind::exp_quadratic: return "exp_quadratic";
  }
  return "unknown";
}

Generator Generator::quadratic_discount(double beta, double gamma, int d) {
  if (!(gamma > 0.0) || !(beta >= 0.0) || !std::isfinite(beta) || !std::isfinite(gamma))
    throw Error(ErrorCode::invalid_parameters, "quadratic_discount needs beta >= 0 and gamma > 0");
  if (d < 1 || d > kMaxDim) throw Error(ErrorCode::invalid_argument, "dimension out of range");
  Generator g(GeneratorKind::quadratic_discount, d);
  g.beta_ = beta;
  g.gamma_ = gamma;
  return g;
}

Generator Generator::exponential_ce(int d) {
  if (d < 1 || d > kMaxDim) throw Error(ErrorCode::invalid_argument, "dimension out of range");
  return Generator(GeneratorKind::exponential_ce, d);
}

Generator Generator::power_ce(double r, int d) {
  if (!(r > 0.0 && r < 1.0)) throw Error(ErrorCode::invalid_parameters, "power_ce needs r in (0, 1)");
  if (d < 1 || d > kMaxDim) throw Error(ErrorCode::invalid_argument, "dimension out of range");
  Generator g(GeneratorKind::power_ce, d);
  g.r_ = r;
  return g;
}

Generator Generator::recursive_kp(double alpha, double rho, double beta, double consumption, int d) {
  if (!(rho > 0.0) || !(rho <= alpha) || !(alpha <= 1.0))
    throw Error(ErrorCode::invalid_parameters, "recursive_kp needs 0 < rho <= alpha <= 1");
  if (!(beta >= 0.0) || !(consumption >= 0.0))
    throw Error(ErrorCode::invalid_parameters, "recursive_kp needs beta >= 0 and consumption >= 0");
  if (d < 1 || d > kMaxDim) throw Error(ErrorCode::invalid_argument, "dimension out of range");
  Generator g(GeneratorKind::recursive_kp, d);
  g.beta_ = beta;
  g.k_ = beta * alpha / rho;
  g.q_ = 1.0 - rho / alpha;
  g.c_ = std::pow(consumption, rho) / std::pow(alpha, rho / alpha);
  return g;
}

Generator Generator::exp_quadratic(int d) {
  if (d < 1 || d > kMaxDim) throw Error(ErrorCode::invalid_argument, "dimension out of range");
  return Generator(GeneratorKind::exp_quadratic, d);
}

Generator Generator::from_spec(const GeneratorSpec& s, int d) {
  if (s.kind == "quadratic_discount") return quadratic_discount(s.beta, s.gamma, d);
  if (s.kind == "exponential_ce") return exponential_ce(d);
  if (s.kind == "power_ce") return power_ce(s.r, d);
  if (s.kind == "recursive_kp") return recursive_kp(s.alpha, s.rho, s.beta, s.consumption, d);
  if (s.kind == "exp_quadratic") return exp_quadratic(d);
  throw Error(ErrorCode::configuration_error, "unknown generator kind '" + s.kind + "'");
}

double Generator::raw_value(double y, std::span<const double> z) const {
  switch (kind_) {
    case GeneratorKind::quadratic_discount: return beta_ * y + sq_norm(z) / (2.0 * gamma_);
    case GeneratorKind::exponential_ce: return 0.5 * sq_norm(z);
    case GeneratorKind::power_ce:
      if (!(y > 0.0)) return kInf;
      return (1.0 - r_) * sq_norm(z) / (2.0 * y);
    case GeneratorKind::recursive_kp:
      if (!(y > 0.0)) return kInf;
      return k_ * (y - c_ * std::pow(y, q_));
    case GeneratorKind::exp_quadratic: return std::exp(y) + 0.5 * sq_norm(z);
  }
  return kInf;
}

double Generator::value(double y, std::span<const double> z) const {
  check_dim(*this, z.size());
  double v = raw_value(y, z);
  if (!std::isfinite(v)) return kInf;
  for (std::size_t k = 0; k < theta_.size(); ++k) v -= z[k] * theta_[k];
  return v;
}

bool Generator::in_domain(double y, std::span<const double> z) const { return std::isfinite(value(y, z)); }

double Generator::raw_conjugate(double b, std::span<const double> c) const {
  const double c2 = sq_norm(c);
  switch (kind_) {
    case GeneratorKind::quadratic_discount:
      if (std::abs(b - beta_) > 1e-12 * std::max(1.0, std::abs(beta_))) return kInf;
      return gamma_ * c2 / 2.0;
    case GeneratorKind::exponential_ce:
      if (std::abs(b) > 1e-12) return kInf;
      return c2 / 2.0;
    case GeneratorKind::power_ce: {
      const double s = b + c2 / (2.0 * (1.0 - r_));
      if (s > 1e-12 * (1.0 + std::abs(b))) return kInf;
      return 0.0;
    }
    case GeneratorKind::recursive_kp: {
      if (c2 > 0.0) return kInf;
      const double s = b - k_;
      const double a = k_ * c_;
      if (a == 0.0) return s <= 0.0 ? 0.0 : kInf;
      if (q_ == 0.0) return s <= 0.0 ? a : kInf;
      if (!(s < 0.0)) return kInf;
      const double ystar = std::pow(a * q_ / (-s), 1.0 / (1.0 - q_));
      return a * (1.0 - q_) * std::pow(ystar, q_);
    }
    case GeneratorKind::exp_quadratic:
      if (b < 0.0) return kInf;
      if (b == 0.0) return c2 / 2.0;
      return b * std::log(b) - b + c2 / 2.0;
  }
  return kInf;
}

double Generator::conjugate(double b, std::span<const double> c) const {
  check_dim(*this, c.size());
  if (theta_.empty()) return raw_conjugate(b, c);
  std::array<double, kMaxDim> shifted{};
  for (int k = 0; k < d_; ++k) shifted[static_cast<std::size_t>(k)] = c[static_cast<std::size_t>(k)];
  for (std::size_t k = 0; k < theta_.size(); ++k) shifted[k] += theta_[k];
  return raw_conjugate(b, std::span<const double>(shifted.data(), static_cast<std::size_t>(d_)));
}

bool Generator::conjugate_in_domain(double b, std::span<const double> c) const {
  return std::isfinite(conjugate(b, c));
}

double Generator::dy(double y, std::span<const double> z) const {
  check_dim(*this, z.size());
  switch (kind_) {
    case GeneratorKind::quadratic_discount: return beta_;
    case GeneratorKind::exponential_ce: return 0.0;
    case GeneratorKind::power_ce:
      if (!(y > 0.0)) throw Error(ErrorCode::no_gradient, "power_ce has no gradient at y <= 0");
      return -(1.0 - r_) * sq_norm(z) / (2.0 * y * y);
    case GeneratorKind::recursive_kp:
      if (!(y > 0.0)) throw Error(ErrorCode::no_gradient, "recursive_kp has no gradient at y <= 0");
      return k_ * (1.0 - c_ * q_ * std::pow(y, q_ - 1.0));
    case GeneratorKind::exp_quadratic: return std::exp(y);
  }
  return 0.0;
}

void Generator::dz(double y, std::span<const double> z, std::span<double> out) const {
  check_dim(*this, z.size());
  check_dim(*this, out.size());
  switch (kind_) {
    case GeneratorKind::quadratic_discount:
      for (int k = 0; k < d_; ++k) out[static_cast<std::size_t>(k)] = z[static_cast<std::size_t>(k)] / gamma_;
      break;
    case GeneratorKind::exponential_ce:
    case GeneratorKind::exp_quadratic:
      for (int k = 0; k < d_; ++k) out[static_cast<std::size_t>(k)] = z[static_cast<std::size_t>(k)];
      break;
    case GeneratorKind::power_ce:
      if (!(y > 0.0)) throw Error(ErrorCode::no_gradient, "power_ce has no gradient at y <= 0");
      for (int k = 0; k < d_; ++k) out[static_cast<std::size_t>(k)] = (1.0 - r_) * z[static_cast<std::size_t>(k)] / y;
      break;
    case GeneratorKind::recursive_kp:
      if (!(y > 0.0)) throw Error(ErrorCode::no_gradient, "recursive_kp has no gradient at y <= 0");
      for (int k = 0; k < d_; ++k) out[static_cast<std::size_t>(k)] = 0.0;
      break;
  }
  for (std::size_t k = 0; k < theta_.size(); ++k) out[k] -= theta_[k];
}

void Generator::pointwise_optimizer(double y, std::span<const double> z, std::span<const double> v_hat,
                        std::span<double> out) const {
  check_dim(*this, z.size());
  const std::size_t n = std::max<std::size_t>(theta_.size(), v_hat.size());
  if (v_hat.size() != out.size() || (!theta_.empty() && v_hat.size() != theta_.size()) ||
      static_cast<int>(n) > d_)
    throw Error(ErrorCode::invalid_argument, "v_hat must have n components");
  auto th = [&](std::size_t k) { return k < theta_.size() ? theta_[k] : 0.0; };
  switch (kind_) {
    case GeneratorKind::quadratic_discount:
      for (std::size_t k = 0; k < n; ++k) out[k] = gamma_ * (v_hat[k] + th(k)) - z[k];
      return;
    case GeneratorKind::exponential_ce:
    case GeneratorKind::exp_quadratic:
      for (std::size_t k = 0; k < n; ++k) out[k] = v_hat[k] + th(k) - z[k];
      return;
    case GeneratorKind::power_ce:
      if (!(y > 0.0)) throw Error(ErrorCode::no_solution, "power_ce gradient undefined at y <= 0");
      for (std::size_t k = 0; k < n; ++k) out[k] = y * (v_hat[k] + th(k)) / (1.0 - r_) - z[k];
      return;
    case GeneratorKind::recursive_kp: {
      bool flat_match = true;
      for (std::size_t k = 0; k < n; ++k)
        if (std::abs(v_hat[k] + th(k)) > 1e-12) flat_match = false;
      if (flat_match)
        throw Error(ErrorCode::ambiguous_optimizer, "gradient in zhat is constant and equals v_hat");
      throw Error(ErrorCode::no_solution, "v_hat is outside the range of the zhat gradient");
    }
  }
}

Generator market_transform(const Generator& h, std::vector<double> theta_hat) {
  if (static_cast<int>(theta_hat.size()) > h.d())
    throw Error(ErrorCode::invalid_argument, "theta_hat longer than the Brownian dimension");
  for (double t : theta_hat)
    if (!std::isfinite(t)) throw Error(ErrorCode::invalid_argument, "theta_hat must be finite");
  Generator g = h;
  if (g.theta_.size() < theta_hat.size()) g.theta_.resize(theta_hat.size(), 0.0);
  for (std::size_t k = 0; k < theta_hat.size(); ++k) g.theta_[k] += theta_hat[k];
  return g;
}

std::vector<double> pointwise_optimizer(const Generator& g, double y, std::span<const double> z, std::span<const double> v_hat) {
  std::vector<double> out(v_hat.size());
  g.pointwise_optimizer(y, z, v_hat, out);
  return out;
}

std::vector<double> pointwise_optimizer_newton(const Generator& g, double y, std::span<const double> z,
                                   std::span<const double> v_hat, std::vector<double> start) {
  const std::size_t n = v_hat.size();
  const auto ni = static_cast<Eigen::Index>(n);
  std::vector<double> eta = start.empty() ? std::vector<double>(n, 0.0) : std::move(start);
  std::vector<double> w(z.begin(), z.end()), grad(z.size());
  auto residual = [&](const std::vector<double>& e, Eigen::VectorXd& F) {
    for (std::size_t k = 0; k < z.size(); ++k) w[k] = z[k] + (k < n ? e[k] : 0.0);
    g.dz(y, w, grad);
    for (std::size_t k = 0; k < n; ++k) F(static_cast<Eigen::Index>(k)) = grad[k] - v_hat[k];
  };
  Eigen::VectorXd F(ni), Fp(ni);
  residual(eta, F);
  for (int it = 0; it < 100; ++it) {
    const double fn = F.norm();
    if (fn <= 1e-12) return eta;
    Eigen::MatrixXd J(ni, ni);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = 1e-6 * (1.0 + std::abs(eta[j]));
      std::vector<double> e2 = eta;
      e2[j] += h;
      residual(e2, Fp);
      J.col(static_cast<Eigen::Index>(j)) = (Fp - F) / h;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
    if (lu.rank() < ni || J.norm() < 1e-14) throw Error(ErrorCode::no_solution, "flat gradient section");
    Eigen::VectorXd step = lu.solve(-F);
    double lambda = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 40; ++ls) {
      std::vector<double> trial = eta;
      for (std::size_t k = 0; k < n; ++k) trial[k] += lambda * step(static_cast<Eigen::Index>(k));
      residual(trial, Fp);
      if (Fp.allFinite() && Fp.norm() < fn) {
        eta = std::move(trial);
        F = Fp;
        improved = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!improved) break;
  }
  if (F.norm() <= 1e-10) return eta;
  throw Error(ErrorCode::no_solution, "Newton iteration did not reach the gradient equation");
}

double driver_change(const Generator& g, double b, std::span<const double> c, double a, double M, double A,
                     double x_pi, std::span<const double> pi_hat, double ybar, std::span<const double> zbar) {
  if (!(M > 0.0)) throw Error(ErrorCode::invalid_density, "density must be positive");
  const std::size_t d = static_cast<std::size_t>(g.d());
  if (c.size() != d || zbar.size() != d || pi_hat.size() > d)
    throw Error(ErrorCode::invalid_argument, "driver_change dimension mismatch");
  const double Y = (ybar - A) / M;
  std::array<double, kMaxDim> Z{}, W{};
  double cz = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    Z[k] = (zbar[k] + (ybar - A) * c[k]) / M;
    W[k] = Z[k] + (k < pi_hat.size() ? pi_hat[k] : 0.0);
    cz += c[k] * Z[k];
  }
  const double gv = g.value(x_pi + Y, std::span<const double>(W.data(), d));
  return M * (gv - b * Y - cz + a);
}

OptimalCoefficients extract_optimal_coefficients(const Generator& g, double s, std::span<const double> w) {
  OptimalCoefficients out;
  out.b = g.dy(s, w);
  out.c.resize(w.size());
  g.dz(s, w, out.c);
  out.conjugate = g.conjugate(out.b, out.c);
  double cw = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) cw += out.c[k] * w[k];
  out.touching_residual = g.value(s, w) - (out.b * s + cw - out.conjugate);
  return out;
}

double optimal_shift(const OptimalCoefficients& coef, std::span<const double> pi_hat, double x) {
  double cp = 0.0;
  for (std::size_t k = 0; k < pi_hat.size(); ++k) cp += coef.c[k] * pi_hat[k];
  return coef.conjugate - cp - coef.b * x;
}

}  // namespace fbsde
