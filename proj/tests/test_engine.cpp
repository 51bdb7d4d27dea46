#include <doctest.h>

#include <cmath>

#include "fbsde/engine.hpp"
#include "fbsde/parallel.hpp"

using namespace fbsde;

namespace {

constexpr std::size_t kPaths = 100000;

const PathEnsemble& ensemble() {
  static const PathEnsemble p = simulate_brownian(make_uniform_grid(1.0, 50), 2, 1, kPaths, 11);
  return p;
}

ProcessPath constant(int dim, double v, Timing t = Timing::predictable) {
  return ProcessPath(kPaths, 50, dim, t, v);
}

}  // namespace

TEST_CASE("Ito integral of a constant has mean zero") {
  const ProcessPath I = ito_integral(constant(1, 0.7), ensemble());
  const MeanStat s = mean_stat(I.slice(50), kPaths);
  CHECK(std::abs(s.mean) <= 5.0 * s.se);
  // Variance of 0.7 W_1 is 0.49.
  CHECK(s.variance == doctest::Approx(0.49).epsilon(0.03));
}

TEST_CASE("Ito integral over the tilde components") {
  const ProcessPath one = constant(1, 1.0);
  const ProcessPath I = ito_integral(one, ensemble(), 1);
  for (std::size_t p = 0; p < kPaths; p += 1013) CHECK(I(p, 50) == doctest::Approx(ensemble().W(50, 1)[p]));
}

TEST_CASE("stochastic exponential moments") {
  const Density d = stochastic_exponential(constant(1, 0.5), ensemble());
  std::vector<double> mT(d.M.slice(50), d.M.slice(50) + kPaths);
  const MeanStat s = mean_stat(mT);
  CHECK(std::abs(s.mean - 1.0) <= 5.0 * s.se);

  // Variance of the lognormal M_T is e^{c^2 T} - 1; its SE uses the fourth
  // central moment of the sample.
  double m4 = 0.0;
  for (double v : mT) m4 += std::pow(v - s.mean, 4);
  m4 /= static_cast<double>(kPaths);
  const double var_se = std::sqrt((m4 - s.variance * s.variance) / static_cast<double>(kPaths));
  CHECK(std::abs(s.variance - (std::exp(0.25) - 1.0)) <= 5.0 * var_se);

  for (double v : d.M.data()) REQUIRE(v > 0.0);
  // Exact discrete log-increments.
  for (std::size_t p = 0; p < kPaths; p += 997)
    for (int i = 0; i < 50; ++i)
      CHECK(d.logM(p, i + 1) - d.logM(p, i) ==
            doctest::Approx(-0.5 * ensemble().dW(i, 0)[p] - 0.125 * 0.02).epsilon(1e-12));
}

TEST_CASE("discount and combined density") {
  const Discount D = make_discount(constant(1, 0.1), ensemble().grid());
  const Density M = stochastic_exponential(constant(1, 0.2), ensemble());
  const ProcessPath MD = combined_density(D, M);
  for (std::size_t p = 0; p < kPaths; p += 101)
    CHECK(std::abs(std::log(MD(p, 50)) + 0.1 + 0.02 + 0.2 * ensemble().W(50, 0)[p]) <= 1e-12);

  SUBCASE("terminal log density without storage") {
    const ProcessPath b = constant(1, 0.1), c = constant(1, 0.2);
    const std::vector<double> l = terminal_log_density(&b, &c, ensemble());
    for (std::size_t p = 0; p < kPaths; p += 101) CHECK(l[p] == doctest::Approx(std::log(MD(p, 50))).epsilon(1e-12));
  }
  SUBCASE("b = 0 gives M^c") {
    const Discount D0 = make_discount(constant(1, 0.0), ensemble().grid());
    const ProcessPath only = combined_density(D0, M);
    for (std::size_t p = 0; p < kPaths; p += 101) CHECK(only(p, 50) == doctest::Approx(M.M(p, 50)).epsilon(1e-14));
  }
}

TEST_CASE("Girsanov shift") {
  const std::vector<double> theta{0.2};
  const PathEnsemble q = girsanov_shift(ensemble(), theta);
  const MeanStat s = mean_stat(q.W(50, 0), kPaths);
  CHECK(std::abs(s.mean - 0.2) <= 5.0 * s.se);
  for (int i = 0; i < 50; ++i)
    for (std::size_t p = 0; p < kPaths; p += 503) REQUIRE(q.dW(i, 1)[p] == ensemble().dW(i, 1)[p]);
}

TEST_CASE("thread count does not change reductions") {
  const ProcessPath I = ito_integral(constant(1, 0.3), ensemble());
  set_worker_count(1);
  const double a = mean_stat(I.slice(50), kPaths).mean;
  set_worker_count(4);
  const double b = mean_stat(I.slice(50), kPaths).mean;
  set_worker_count(0);
  CHECK(a == b);
}
