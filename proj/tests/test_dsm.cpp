#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cascade/causal_score.hpp"
#include "cascade/dsm.hpp"
#include "support/oracles.hpp"

using namespace cascade;

TEST_CASE("perfect score gives zero loss", "[dsm]") {
  // Items whose target -eps/sqrt(var) is exactly reproduced by a linear net
  // s(z, t) = -z (var = 1, mu = 0 so z_t = eps).
  Mlp net({2, 1});
  net.w[0] = {-1.0, 0.0};
  std::vector<DsmItem> batch;
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    DsmItem it;
    it.t = 0.5;
    it.var = 1.0;
    it.eps = rng.normal();
    it.zt = it.eps;  // mu = 0
    batch.push_back(it);
  }
  REQUIRE(dsm_loss(net, batch, 1.0) == Catch::Approx(0.0).margin(1e-20));
}

TEST_CASE("time weighting gamma", "[dsm]") {
  REQUIRE(dsm_gamma(0.0) == 1.0);
  REQUIRE(dsm_gamma(1.0) == 0.5);
}

TEST_CASE("psi cancels the inverse variance scale", "[dsm]") {
  Rng rng(11);
  Mlp net = make_score_net(8, 5);
  std::vector<DsmItem> batch;
  for (int i = 0; i < 64; ++i) {
    DsmItem it;
    it.t = rng.uniform_open_lo(0.01, 1.0);
    it.var = 0.3 + rng.uniform();
    it.eps = rng.normal();
    it.zt = rng.normal();
    batch.push_back(it);
  }
  const double loss = dsm_loss(net, batch, 1.0);
  // per-cell identity: gamma * var * (s + eps/sqrt(var))^2 =
  //                    gamma * (sqrt(var) s + eps)^2, with the net
  //                    parameterizing sqrt(var) * s directly
  double expect = 0.0;
  for (const auto& it : batch) {
    const double s = mlp_forward(net, {it.zt, it.t})[0] / std::sqrt(it.var);
    const double r = std::sqrt(it.var) * s + it.eps;
    expect += dsm_gamma(it.t) * r * r;
  }
  expect /= batch.size();
  REQUIRE(loss == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("dsm rejects zero variance", "[dsm]") {
  Mlp net = make_score_net(8, 5);
  std::vector<DsmItem> batch(1);
  batch[0].var = 0.0;
  REQUIRE_THROWS_AS(dsm_loss(net, batch, 1.0), Error);
}

TEST_CASE("dsm gradients match finite differences", "[dsm]") {
  Rng rng(17);
  Mlp net = make_score_net(6, 9);
  std::vector<DsmItem> batch;
  for (int i = 0; i < 16; ++i) {
    DsmItem it;
    it.t = rng.uniform_open_lo(0.05, 1.0);
    it.var = 0.2 + rng.uniform();
    it.eps = rng.normal();
    it.zt = rng.normal();
    batch.push_back(it);
  }
  MlpGrads grads(net);
  MlpWorkspace ws;
  dsm_loss_grad(net, batch, 1.0, grads, ws);
  for (int k = 0; k < 6; ++k) {
    const std::size_t l = rng.below(net.w.size());
    const std::size_t j = rng.below(net.w[l].size());
    auto f = [&](double v) {
      Mlp copy = net;
      copy.w[l][j] = v;
      return dsm_loss(copy, batch, 1.0);
    };
    const double fd = oracles::central_diff(f, net.w[l][j]);
    REQUIRE(grads.w[l][j] == Catch::Approx(fd).epsilon(1e-4).margin(1e-8));
  }
}

namespace {

// Shared scenario for analytic-score recovery: z0 ~ N(0,1), f = 0,
// g = sqrt(2), so Sigma(t) = 2t and the true perturbed score is
// s*(z, t) = -z / (1 + 2t).
struct GaussianScoreSetup {
  NodeSde sde;
  MuSystem system;
  std::vector<Field> inits;
  Mlp net;

  explicit GaussianScoreSetup(int dataset = 4096, std::uint64_t seed = 21)
      : sde(make_basic_sde("X", std::sqrt(2.0), 1.0, 24)) {
    Field z0(static_cast<std::size_t>(dataset));
    Rng rng(seed);
    for (auto& v : z0) v = rng.normal();
    inits.push_back(std::move(z0));
    system.nodes.push_back({&sde, nullptr, {}});
    net = make_score_net(32, 7);
  }

  double true_score(double z, double t) const { return -z / (1.0 + 2.0 * t); }
};

}  // namespace

TEST_CASE("trained score matches the analytic Gaussian score", "[dsm][slow]") {
  GaussianScoreSetup setup;
  ScoreTrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 256;
  cfg.time_groups = 16;
  cfg.steps_per_epoch = 64;
  cfg.lr = 2e-2;
  cfg.lr_decay = 1e-3;
  cfg.seed = 4;
  train_score(setup.net, setup.sde, setup.system, setup.inits, 0, cfg);

  NetScore score(setup.net, setup.sde);
  double max_err = 0.0;
  for (double t : {0.1, 0.5, 1.0}) {
    for (double z = -3.0; z <= 3.0; z += 0.1) {
      max_err = std::max(max_err, std::abs(score.value(z, t) - setup.true_score(z, t)));
    }
  }
  INFO("max abs score error " << max_err);
  REQUIRE(max_err < 0.1);
}

TEST_CASE("score of a single repeated point points back at it", "[dsm]") {
  NodeSde sde = make_basic_sde("X", 1.0, 1.0, 16);
  MuSystem system;
  system.nodes.push_back({&sde, nullptr, {}});
  const double point = 0.8;
  std::vector<Field> inits = {Field(512, point)};
  Mlp net = make_score_net(24, 3);
  ScoreTrainConfig cfg;
  cfg.epochs = 120;
  cfg.batch_size = 128;
  cfg.steps_per_epoch = 16;
  cfg.lr = 1e-2;
  cfg.seed = 6;
  train_score(net, sde, system, inits, 0, cfg);
  NetScore score(net, sde);
  for (double t : {0.2, 0.6, 1.0}) {
    for (double z : {-2.0, -0.5, 0.2, 1.5, 3.0}) {
      const double s = score.value(z, t);
      if (std::abs(z - point) > 0.3) {
        INFO("z " << z << " t " << t << " s " << s);
        REQUIRE(s * (point - z) > 0.0);  // points toward the data point
      }
    }
  }
}

TEST_CASE("loss curve trends downward", "[dsm]") {
  GaussianScoreSetup setup(1024, 33);
  ScoreTrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 128;
  cfg.steps_per_epoch = 8;
  cfg.lr = 1e-2;
  cfg.seed = 12;
  const auto result = train_score(setup.net, setup.sde, setup.system, setup.inits, 0, cfg);
  REQUIRE(result.epoch_loss.size() == 40);
  auto avg10 = [&](int from) {
    double s = 0.0;
    for (int i = from; i < from + 10; ++i)
      s += result.epoch_loss[static_cast<std::size_t>(i)];
    return s / 10.0;
  };
  REQUIRE(avg10(30) <= avg10(0));
  REQUIRE(result.epoch_loss.back() <= result.epoch_loss.front());
}
