#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cascade/sde.hpp"
#include "support/oracles.hpp"

using namespace cascade;

TEST_CASE("forward path with no dynamics is constant", "[sde]") {
  NodeSde sde = make_basic_sde("X", 1e-300, 1.0, 16);
  const Field z0 = {0.3, -1.2};
  const auto traj = forward_path(sde, z0, {}, nullptr, 7);
  REQUIRE(traj.size() == 17);
  for (const auto& z : traj) {
    REQUIRE(z[0] == Catch::Approx(0.3).margin(1e-12));
    REQUIRE(z[1] == Catch::Approx(-1.2).margin(1e-12));
  }
}

TEST_CASE("pure guidance relaxes exponentially to the target", "[sde]") {
  // lambda = 1 constant, phi = c: z_{j+1} = z_j + (c - z_j) dt
  NodeSde sde = make_basic_sde("X", 1e-300, 1.0, 32, 1.0);
  sde.lambda.linear_decay = false;
  const double c = 2.5, z0 = -1.0;
  Guidance guide;
  guide.phi = {Field(1, c)};
  const auto traj = forward_path(sde, {z0}, {}, &guide, 3);
  const double dt = sde.dt();
  double expect = z0;
  for (int j = 0; j < sde.steps; ++j) expect = expect + (c - expect) * dt;
  REQUIRE(traj.back()[0] == Catch::Approx(expect).margin(1e-10));
  // equivalently c + (z0 - c) * (1 - dt)^N
  REQUIRE(traj.back()[0] ==
          Catch::Approx(c + (z0 - c) * std::pow(1.0 - dt, sde.steps)).margin(1e-10));
}

TEST_CASE("brownian variance grows linearly", "[sde]") {
  NodeSde sde = make_basic_sde("X", 1.0, 1.0, 16);
  std::vector<double> terminal;
  const Field z0(100, 0.0);  // 100 cells per path batch
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto traj = forward_path(sde, z0, {}, nullptr, 99, s);
    for (double v : traj.back()) terminal.push_back(v);
  }
  REQUIRE(terminal.size() == 100000);
  REQUIRE(oracles::variance(terminal) == Catch::Approx(1.0).epsilon(0.03));
  REQUIRE(std::abs(oracles::mean(terminal)) < 0.01);
}

TEST_CASE("forward path rejects non-finite starts", "[sde]") {
  NodeSde sde = make_basic_sde("X", 1.0, 1.0, 8);
  REQUIRE_THROWS_AS(forward_path(sde, {std::nan("")}, {}, nullptr, 1), Error);
}

TEST_CASE("kernel mu is constant without drift or guidance", "[sde]") {
  NodeSde sde = make_basic_sde("X", 0.7, 1.0, 32);
  const Field mu = kernel_mu(sde, {1.5, -2.0}, {}, nullptr, 0.8);
  REQUIRE(mu[0] == Catch::Approx(1.5).margin(1e-12));
  REQUIRE(mu[1] == Catch::Approx(-2.0).margin(1e-12));
}

TEST_CASE("kernel mu matches the linear ODE solution", "[sde]") {
  // f(z) = -z via a linear 1-layer drift net reading (z, t)
  NodeSde sde = make_basic_sde("X", 0.5, 1.0, 64);
  sde.drift.w[0] = {-1.0, 0.0};  // -z + 0*t
  const double z0 = 2.0;
  const Field mu = kernel_mu(sde, {z0}, {}, nullptr, 1.0);
  const double exact = std::exp(-1.0) * z0;
  REQUIRE(mu[0] == Catch::Approx(exact).epsilon(2.0 * sde.dt()));
}

TEST_CASE("kernel mu matches the Monte-Carlo path mean for small g", "[sde]") {
  NodeSde sde = make_basic_sde("X", 0.05, 1.0, 32, 0.8);
  sde.drift.w[0] = {-0.5, 0.2};
  Guidance guide;
  guide.phi = {Field(1, 1.0)};
  const double z0 = 0.4;
  std::vector<double> terminal;
  for (std::uint64_t s = 0; s < 20000; ++s)
    terminal.push_back(forward_path(sde, {z0}, {}, &guide, 123, s).back()[0]);
  const Field mu = kernel_mu(sde, {z0}, {}, &guide, 1.0);
  const double se = std::sqrt(oracles::variance(terminal) / terminal.size());
  REQUIRE(std::abs(oracles::mean(terminal) - mu[0]) < 3.0 * se + 1e-9);
}

TEST_CASE("kernel sigma is exact for constant and cubic g^2", "[sde]") {
  NodeSde sde = make_basic_sde("X", 0.9, 1.0, 16);
  REQUIRE(kernel_sigma(sde, 0.7) == Catch::Approx(0.81 * 0.7).margin(1e-12));

  // g(t)^2 = t^2: Simpson is exact for cubics and below
  NodeSde ramp = make_basic_sde("X", 1.0, 1.0, 16);
  ramp.g_override = [](double t) { return t; };
  REQUIRE(kernel_sigma(ramp, 1.0) == Catch::Approx(1.0 / 3.0).margin(1e-14));
  REQUIRE(kernel_sigma(ramp, 0.5) == Catch::Approx(0.125 / 3.0).margin(1e-14));

  // g(t)^2 = t^3 is still exact
  NodeSde cubic = make_basic_sde("X", 1.0, 1.0, 16);
  cubic.g_override = [](double t) { return std::pow(t, 1.5); };
  REQUIRE(kernel_sigma(cubic, 1.0) == Catch::Approx(0.25).margin(1e-13));
}

TEST_CASE("kernel sigma matches a fine trapezoid oracle for sin^2", "[sde]") {
  NodeSde sde = make_basic_sde("X", 1.0, 1.0, 64);
  sde.g_override = [](double t) { return std::abs(std::sin(t)); };
  auto g2 = [](double t) { return std::sin(t) * std::sin(t); };
  const double oracle = oracles::trapezoid(g2, 0.0, 1.0, 200000);
  REQUIRE(kernel_sigma(sde, 1.0) == Catch::Approx(oracle).margin(1e-6));
}

TEST_CASE("quadrature error scales as O(dt^4) for smooth g^2", "[sde]") {
  auto exact = 0.5 - 0.25 * std::sin(2.0);  // int_0^1 sin^2
  std::vector<double> errs;
  for (int n : {8, 16, 32, 64}) {
    NodeSde sde = make_basic_sde("X", 1.0, 1.0, n);
    sde.g_override = [](double t) { return std::abs(std::sin(t)); };
    errs.push_back(std::abs(kernel_sigma(sde, 1.0) - exact));
  }
  const double slope = std::log(errs[0] / errs[3]) / std::log(64.0 / 8.0);
  REQUIRE(slope == Catch::Approx(4.0).margin(0.5));
}

TEST_CASE("kernel sigma rejects odd step counts", "[sde]") {
  NodeSde sde = make_basic_sde("X", 1.0, 1.0, 16);
  sde.steps = 15;
  REQUIRE_THROWS_AS(kernel_sigma(sde, 1.0), Error);
}

TEST_CASE("sample_perturbed has the right moments and determinism", "[sde]") {
  PerturbationKernel k;
  k.mu = {1.0};
  k.var = {0.64};
  std::vector<double> draws;
  for (std::uint64_t s = 0; s < 100000; ++s)
    draws.push_back(sample_perturbed(k, 5, s).first[0]);
  REQUIRE(oracles::mean(draws) == Catch::Approx(1.0).margin(0.01));
  REQUIRE(oracles::variance(draws) == Catch::Approx(0.64).epsilon(0.03));

  // zero variance collapses to mu
  PerturbationKernel k0;
  k0.mu = {2.0};
  k0.var = {0.0};
  REQUIRE(sample_perturbed(k0, 1).first[0] == 2.0);

  // determinism
  const auto a = sample_perturbed(k, 9, 3);
  const auto b = sample_perturbed(k, 9, 3);
  REQUIRE(a.first == b.first);
  REQUIRE(a.second == b.second);

  PerturbationKernel bad;
  bad.mu = {0.0};
  bad.var = {-1.0};
  REQUIRE_THROWS_AS(sample_perturbed(bad, 1), Error);
}

TEST_CASE("reparameterized draws match the empirical forward distribution", "[sde]") {
  // f = 0 with time-varying g: the kernel is exactly Gaussian; compare
  // sample_perturbed to forward_path terminals by a two-sample KS test.
  NodeSde sde = make_basic_sde("X", 1.0, 1.0, 200);
  sde.diffusion.w[0] = {0.5};  // g = softplus(0.5 t + b)
  const double t = 1.0;
  const double z0 = 0.3;
  const int n = 10000;
  std::vector<double> via_paths, via_kernel;
  PerturbationKernel k;
  k.mu = kernel_mu(sde, {z0}, {}, nullptr, t);
  k.var = {kernel_sigma(sde, t)};
  for (std::uint64_t s = 0; s < n; ++s) {
    via_paths.push_back(forward_path(sde, {z0}, {}, nullptr, 31, s).back()[0]);
    via_kernel.push_back(sample_perturbed(k, 77, s).first[0]);
  }
  const double d = oracles::ks_statistic(via_paths, via_kernel);
  // 1% critical value for two-sample KS with n = m = 10^4
  const double crit = 1.628 * std::sqrt(2.0 / n);
  REQUIRE(d < crit);
}

TEST_CASE("forward moments match the kernel within Monte-Carlo error", "[sde]") {
  // Small g and small lambda: the Gaussian kernel approximation should hold
  // to Monte-Carlo precision (the lambda pull contracts path variance by
  // ~lambda*T relative to the quadrature, so lambda stays small here).
  NodeSde sde = make_basic_sde("X", 0.2, 1.0, 64, 0.01);
  const double z0 = -0.5, t = 1.0;
  const int batches = 10000;
  std::vector<double> terminal;
  terminal.reserve(10 * batches);
  const Field z0f(10, z0);
  Guidance g10;
  g10.phi = {Field(10, 0.8)};
  for (std::uint64_t s = 0; s < batches; ++s) {
    const auto traj = forward_path(sde, z0f, {}, &g10, 555, s);
    for (double v : traj.back()) terminal.push_back(v);
  }
  const double mu = kernel_mu(sde, z0f, {}, &g10, t)[0];
  const double var = kernel_sigma(sde, t);
  const double se_mean = std::sqrt(oracles::variance(terminal) / terminal.size());
  REQUIRE(std::abs(oracles::mean(terminal) - mu) < 3.0 * se_mean + 1e-9);
  REQUIRE(oracles::variance(terminal) == Catch::Approx(var).epsilon(0.03));
}
