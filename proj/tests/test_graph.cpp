#include <catch2/catch_amalgamated.hpp>

#include "cascade/graph.hpp"
#include "support/oracles.hpp"

using namespace cascade;

namespace {

LatentNode scalar_node(const NodeId& id, double sigma = 1.0) {
  LatentNode n;
  n.id = id;
  n.rows = 1;
  n.cols = 1;
  n.sigma = sigma;
  return n;
}

CausalGraph chain_abc() {
  CausalGraph g;
  g.nodes = {scalar_node("A"), scalar_node("B"), scalar_node("C")};
  g.nodes[1].causal_coeffs = {1.0};
  g.nodes[2].causal_coeffs = {1.0};
  g.edges = {{"A", "B"}, {"B", "C"}};
  return g;
}

}  // namespace

TEST_CASE("validate sorts a chain", "[graph]") {
  CausalGraph g = chain_abc();
  REQUIRE(validate(g) == std::vector<NodeId>{"A", "B", "C"});
}

TEST_CASE("validate rejects a 2-cycle", "[graph]") {
  CausalGraph g;
  g.nodes = {scalar_node("A"), scalar_node("B")};
  g.nodes[0].causal_coeffs = {1.0};
  g.nodes[1].causal_coeffs = {1.0};
  g.edges = {{"A", "B"}, {"B", "A"}};
  REQUIRE_THROWS_MATCHES(validate(g), Error, Catch::Matchers::MessageMatches(
                                                 Catch::Matchers::ContainsSubstring(
                                                     "CycleDetected")));
}

TEST_CASE("validate rejects dangling edges", "[graph]") {
  CausalGraph g;
  g.nodes = {scalar_node("A")};
  g.edges = {{"A", "Z"}};
  REQUIRE_THROWS_MATCHES(validate(g), Error, Catch::Matchers::MessageMatches(
                                                 Catch::Matchers::ContainsSubstring(
                                                     "DanglingEdge")));
}

TEST_CASE("hazard pair precedes damage in the earthquake-shaped graph", "[graph]") {
  CausalGraph g;
  g.nodes = {scalar_node("LS"), scalar_node("LF"), scalar_node("BD")};
  g.nodes[2].causal_coeffs = {0.5, 0.5};
  g.edges = {{"LS", "BD"}, {"LF", "BD"}};
  const auto order = validate(g);
  const auto pos = [&](const NodeId& id) {
    return std::find(order.begin(), order.end(), id) - order.begin();
  };
  REQUIRE(pos("LS") < pos("BD"));
  REQUIRE(pos("LF") < pos("BD"));
}

TEST_CASE("validate is idempotent and stable under leaf insertion", "[graph]") {
  CausalGraph g = chain_abc();
  const auto first = validate(g);
  REQUIRE(validate(g) == first);
  // add a leaf; existing relative order is preserved
  g.nodes.push_back(scalar_node("D"));
  g.nodes.back().causal_coeffs = {1.0};
  g.edges.push_back({"C", "D"});
  const auto second = validate(g);
  std::vector<NodeId> trimmed;
  for (const auto& id : second)
    if (id != "D") trimmed.push_back(id);
  REQUIRE(trimmed == first);
}

TEST_CASE("causal_mean evaluates a^T P + a0 cellwise", "[graph]") {
  LatentNode n = scalar_node("X");
  n.causal_coeffs = {0.5, 0.5};
  REQUIRE(causal_mean(n, {{1.0}, {1.0}})[0] == 1.0);

  LatentNode root = scalar_node("R");
  root.causal_intercept = 0.3;
  REQUIRE(causal_mean(root, {})[0] == 0.3);

  LatentNode h = scalar_node("H");
  h.causal_coeffs = {2.0, -1.0};
  h.causal_intercept = 1.0;
  REQUIRE(causal_mean(h, {{3.0}, {4.0}})[0] == 3.0);  // 2*3 - 4 + 1

  REQUIRE_THROWS_AS(causal_mean(h, {{1.0}}), Error);
}

TEST_CASE("zero noise makes ancestral sampling deterministic", "[graph]") {
  CausalGraph g = chain_abc();
  for (auto& n : g.nodes) {
    n.prior_mean = {0.7};
    n.prior_var = {0.0};
    n.sigma = 1e-300;  // sigma must stay positive
  }
  validate(g);
  const auto fields = sample_prior(g, 1);
  REQUIRE(fields.at("A")[0] == Catch::Approx(0.7).margin(1e-12));
  REQUIRE(fields.at("B")[0] == Catch::Approx(0.7).margin(1e-12));
  REQUIRE(fields.at("C")[0] == Catch::Approx(0.7).margin(1e-12));
}

TEST_CASE("same seed reproduces identical fields", "[graph]") {
  CausalGraph g = chain_abc();
  validate(g);
  const auto a = sample_prior(g, 42);
  const auto b = sample_prior(g, 42);
  for (const auto& [id, f] : a) REQUIRE(f == b.at(id));
  const auto c = sample_prior(g, 43);
  REQUIRE(a.at("A") != c.at("A"));
}

TEST_CASE("variance propagates through a linear-Gaussian chain", "[graph]") {
  // child = parent + eps, Var(child) ~ Var(parent) + 1
  CausalGraph g;
  LatentNode parent = scalar_node("P");
  parent.rows = 100;
  parent.cols = 100;  // many cells stand in for repeated draws
  parent.prior_var.assign(10000, 1.5);
  LatentNode child = scalar_node("C", 1.0);
  child.rows = 100;
  child.cols = 100;
  child.causal_coeffs = {1.0};
  g.nodes = {parent, child};
  g.edges = {{"P", "C"}};
  validate(g);

  std::vector<double> cvals;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto fields = sample_prior(g, s);
    for (double v : fields.at("C")) cvals.push_back(v);
  }
  REQUIRE(oracles::variance(cvals) == Catch::Approx(2.5).epsilon(0.05));
}

TEST_CASE("empirical covariance matches analytic joint moments", "[graph]") {
  // collider: A -> C <- B with 4 cells each
  CausalGraph g;
  LatentNode a = scalar_node("A");
  a.rows = 2;
  a.cols = 2;
  a.prior_mean = {0.5, -0.5, 1.0, 0.0};
  a.prior_var = {1.0, 2.0, 0.5, 1.0};
  LatentNode b = scalar_node("B");
  b.rows = 2;
  b.cols = 2;
  b.prior_var = {0.8, 0.8, 0.8, 0.8};
  LatentNode c = scalar_node("C", 0.7);
  c.rows = 2;
  c.cols = 2;
  c.causal_coeffs = {1.2, -0.6};
  c.causal_intercept = 0.25;
  g.nodes = {a, b, c};
  g.edges = {{"A", "C"}, {"B", "C"}};
  validate(g);
  const JointMoments jm = joint_moments(g);

  const int n_draws = 200000;
  std::vector<std::vector<double>> av(4), bv(4), cv(4);
  for (int s = 0; s < n_draws; ++s) {
    const auto f = sample_prior(g, static_cast<std::uint64_t>(s));
    for (int cell = 0; cell < 4; ++cell) {
      av[cell].push_back(f.at("A")[cell]);
      bv[cell].push_back(f.at("B")[cell]);
      cv[cell].push_back(f.at("C")[cell]);
    }
  }
  for (int cell = 0; cell < 4; ++cell) {
    REQUIRE(oracles::mean(cv[cell]) ==
            Catch::Approx(jm.mean.at("C")[cell]).margin(0.02));
    REQUIRE(oracles::variance(cv[cell]) ==
            Catch::Approx(jm.covariance("C", "C")[cell]).epsilon(0.03));
    // Cov(A, C)
    double cov_ac = 0.0;
    const double ma = oracles::mean(av[cell]), mc = oracles::mean(cv[cell]);
    for (int s = 0; s < n_draws; ++s)
      cov_ac += (av[cell][s] - ma) * (cv[cell][s] - mc);
    cov_ac /= n_draws - 1;
    REQUIRE(cov_ac == Catch::Approx(jm.covariance("A", "C")[cell]).epsilon(0.05).margin(0.01));
  }
  // independence of roots
  REQUIRE(jm.covariance("A", "B")[0] == 0.0);
}
