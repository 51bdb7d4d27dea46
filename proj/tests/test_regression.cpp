#include <doctest.h>

#include <cmath>

#include "fbsde/parallel.hpp"
#include "fbsde/regression.hpp"

using namespace fbsde;

namespace {

constexpr std::size_t kPaths = 100000;
constexpr int kSteps = 50;

const PathEnsemble& ensemble() {
  static const PathEnsemble p = simulate_brownian(make_uniform_grid(1.0, kSteps), 1, 1, kPaths, 21);
  return p;
}

RegressionBasis exact(int degree) {
  RegressionBasis b;
  b.degree = degree;
  b.ridge = 0.0;
  return b;
}

}  // namespace

TEST_CASE("constant and affine targets are reproduced") {
  const double* w = ensemble().W(kSteps, 0);
  const std::vector<double> five(kPaths, 5.0);
  for (double v : conditional_expectation(five, {w}, exact(2))) REQUIRE(std::abs(v - 5.0) <= 1e-10);
  std::vector<double> t(kPaths);
  for (std::size_t p = 0; p < kPaths; ++p) t[p] = 1.0 - 3.0 * w[p];
  const std::vector<double> e = conditional_expectation(t, {w}, exact(1));
  for (std::size_t p = 0; p < kPaths; ++p) REQUIRE(std::abs(e[p] - t[p]) <= 1e-8);
}

TEST_CASE("least-squares coefficient of a quadratic target") {
  // target = x^2 + noise with x = W_T and independent noise from W at t = 1/2.
  const double* x = ensemble().W(kSteps, 0);
  const double* half = ensemble().W(kSteps / 2, 0);
  std::vector<double> t(kPaths), noise(kPaths);
  for (std::size_t p = 0; p < kPaths; ++p) {
    noise[p] = 0.3 * std::sin(7.0 * half[p]);
    t[p] = x[p] * x[p] + noise[p];
  }
  const Projector P({x}, kPaths, exact(2));
  const std::vector<double> coef = P.coefficients(t.data());
  // Features are standardized: x = m + s u, so the u^2 coefficient is s^2 times that of x^2.
  const MeanStat sx = mean_stat(x, kPaths);
  const double beta2 = coef.back() / sx.variance;
  // SE of an OLS coefficient on u^2 (variance ~ 2) with residual spread of the noise.
  const double se = std::sqrt(mean_stat(noise).variance / (2.0 * static_cast<double>(kPaths))) / sx.variance;
  CHECK(std::abs(beta2 - 1.0) <= 5.0 * se + 1e-3);
}

TEST_CASE("martingale representation of W_T and W_T^2") {
  const StateFeatures f(ensemble());
  std::vector<double> wT(ensemble().W(kSteps, 0), ensemble().W(kSteps, 0) + kPaths);
  const Representation r = martingale_representation(wT, f, RegressionBasis{});
  CHECK(std::abs(r.mean) <= 5.0 * mean_stat(wT).se);
  // Per-path estimates carry regression noise in the tails; test the RMS.
  double s1 = 0.0;
  for (double z : r.Z.data()) s1 += (z - 1.0) * (z - 1.0);
  CHECK(std::sqrt(s1 / static_cast<double>(r.Z.data().size())) <= 0.05);

  std::vector<double> sq(kPaths);
  for (std::size_t p = 0; p < kPaths; ++p) sq[p] = wT[p] * wT[p];
  const Representation r2 = martingale_representation(sq, f, RegressionBasis{});
  CHECK(std::abs(r2.mean - 1.0) <= 5.0 * mean_stat(sq).se);
  double se2 = 0.0;
  for (int i = 0; i < kSteps; ++i)
    for (std::size_t p = 0; p < kPaths; ++p) {
      const double d = r2.Z(p, i) - 2.0 * ensemble().W(i, 0)[p];
      se2 += d * d;
    }
  CHECK(std::sqrt(se2 / static_cast<double>(kPaths * kSteps)) <= 0.05);
}

TEST_CASE("deterministic terminal value") {
  const std::vector<double> k(kPaths, -0.25);
  const Representation r = martingale_representation(k, StateFeatures(ensemble()), exact(2));
  CHECK(r.mean == doctest::Approx(-0.25));
  CHECK(r.residual_max <= 1e-12);
  for (double z : r.Z.data()) REQUIRE(std::abs(z) <= 1e-12);
}

TEST_CASE("drift test") {
  const StateFeatures f(ensemble());
  const double dt = ensemble().grid().dt(0);
  ProcessPath w(kPaths, kSteps, 1, Timing::adapted), up(kPaths, kSteps, 1, Timing::adapted),
      down(kPaths, kSteps, 1, Timing::adapted);
  for (int i = 0; i <= kSteps; ++i)
    for (std::size_t p = 0; p < kPaths; ++p) {
      w(p, i) = ensemble().W(i, 0)[p];
      up(p, i) = ensemble().grid().t(i);
      down(p, i) = -ensemble().grid().t(i);
    }
  const SubmartingaleDiagnostic dw = submartingale_check(w, f, RegressionBasis{}, 0.0, true);
  CHECK(dw.pass);
  CHECK(std::abs(dw.min_mean_drift) <= 0.05);
  const SubmartingaleDiagnostic du = submartingale_check(up, f, RegressionBasis{}, 0.5 * dt);
  CHECK(du.pass);
  CHECK(du.min_conditional_drift == doctest::Approx(dt).epsilon(1e-6));
  CHECK_FALSE(submartingale_check(down, f, RegressionBasis{}, 0.5 * dt).pass);
  CHECK_FALSE(submartingale_check(up, f, RegressionBasis{}, 0.5 * dt, true).pass);
}

TEST_CASE("bmo diagnostic") {
  const StateFeatures f(ensemble());
  const ProcessPath c(kPaths, kSteps, 1, Timing::predictable, 0.4);
  CHECK(bmo_diagnostic(c, f, RegressionBasis{}) == doctest::Approx(0.16).epsilon(0.1));
  ProcessPath w(kPaths, kSteps, 1, Timing::predictable);
  for (int i = 0; i < kSteps; ++i) std::copy_n(ensemble().W(i, 0), kPaths, w.slice(i));
  CHECK(bmo_diagnostic(w, f, RegressionBasis{}) >= 0.5 * 0.9);
}

TEST_CASE("too few paths for the basis") {
  const std::vector<double> x{1.0, 2.0, 3.0};
  CHECK_THROWS_AS(Projector({x.data()}, 3, exact(2)), Error);
}
