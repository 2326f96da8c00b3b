#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/grid.hpp"
#include "cascade/rng.hpp"

namespace cascade {

/// One latent field in the causal network. Cells share the scalar causal
/// coefficients; the per-cell structure lives in the prior mean/variance.
struct LatentNode {
  NodeId id;
  int rows = 1;
  int cols = 1;
  double cell_size = 1.0;

  double causal_intercept = 0.0;        // a0
  std::vector<double> causal_coeffs;    // a, one per parent (topo-stable order)
  double obs_weight = 0.0;              // a_phi, hybrid initialization
  double noise_weight = 0.0;            // a_eps, hybrid initialization; >= 0
  double sigma = 1.0;                   // structural noise scale; > 0

  Field prior_mean;                     // per cell; empty means zero
  Field prior_var;                      // diagonal prior covariance; empty means unit

  int dim() const { return rows * cols; }

  double prior_mean_at(std::size_t cell) const {
    return prior_mean.empty() ? 0.0 : prior_mean[cell];
  }
  double prior_var_at(std::size_t cell) const {
    return prior_var.empty() ? 1.0 : prior_var[cell];
  }

  void validate_fields() const {
    if (rows <= 0 || cols <= 0 || cell_size <= 0.0)
      fail(ErrorCode::config_invalid, "node " + id + ": bad grid shape");
    if (sigma <= 0.0) fail(ErrorCode::config_invalid, "node " + id + ": sigma must be > 0");
    if (noise_weight < 0.0)
      fail(ErrorCode::config_invalid, "node " + id + ": a_eps must be >= 0");
    if (!prior_mean.empty() && static_cast<int>(prior_mean.size()) != dim())
      fail(ErrorCode::dimension_mismatch, "node " + id + ": prior_mean size");
    if (!prior_var.empty()) {
      if (static_cast<int>(prior_var.size()) != dim())
        fail(ErrorCode::dimension_mismatch, "node " + id + ": prior_var size");
      for (double v : prior_var)
        if (v < 0.0) fail(ErrorCode::config_invalid, "node " + id + ": prior_var < 0");
    }
  }
};

/// DAG of latent nodes with linear-Gaussian dependencies.
struct CausalGraph {
  std::vector<LatentNode> nodes;
  std::vector<std::pair<NodeId, NodeId>> edges;  // (parent, child)
  std::vector<NodeId> topo_order;                // filled by validate()

  const LatentNode& node(const NodeId& id) const {
    for (const auto& n : nodes)
      if (n.id == id) return n;
    fail(ErrorCode::dangling_edge, "unknown node " + id);
  }

  LatentNode& node_mut(const NodeId& id) {
    for (auto& n : nodes)
      if (n.id == id) return n;
    fail(ErrorCode::dangling_edge, "unknown node " + id);
  }

  std::vector<NodeId> parents_of(const NodeId& id) const {
    std::vector<NodeId> out;
    for (const auto& [p, c] : edges)
      if (c == id) out.push_back(p);
    return out;
  }

  bool is_root(const NodeId& id) const { return parents_of(id).empty(); }
};

// Kahn's algorithm with ascending-id tie-breaking for reproducible orders.
inline std::vector<NodeId> validate(CausalGraph& graph) {
  std::set<NodeId> ids;
  for (auto& n : graph.nodes) {
    n.validate_fields();
    if (!ids.insert(n.id).second)
      fail(ErrorCode::config_invalid, "duplicate node id " + n.id);
  }
  std::map<NodeId, int> indegree;
  std::map<NodeId, std::vector<NodeId>> children;
  for (const auto& n : graph.nodes) indegree[n.id] = 0;
  for (const auto& [p, c] : graph.edges) {
    if (!ids.count(p)) fail(ErrorCode::dangling_edge, "edge parent " + p + " missing");
    if (!ids.count(c)) fail(ErrorCode::dangling_edge, "edge child " + c + " missing");
    children[p].push_back(c);
    ++indegree[c];
  }
  std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
  for (const auto& [id, deg] : indegree)
    if (deg == 0) ready.push(id);
  std::vector<NodeId> order;
  while (!ready.empty()) {
    NodeId id = ready.top();
    ready.pop();
    order.push_back(id);
    for (const auto& c : children[id])
      if (--indegree[c] == 0) ready.push(c);
  }
  if (order.size() != graph.nodes.size())
    fail(ErrorCode::cycle_detected, "edge set has a cycle");
  for (const auto& n : graph.nodes) {
    const auto np = graph.parents_of(n.id).size();
    if (n.causal_coeffs.size() != np)
      fail(ErrorCode::dimension_mismatch,
           "node " + n.id + ": causal coefficient count != parent count");
  }
  graph.topo_order = order;
  return order;
}

/// Cellwise a^T P(z) + a0. Parent fields must already be aligned to the
/// node's resolution.
inline Field causal_mean(const LatentNode& node,
                         const std::vector<Field>& parent_values) {
  if (parent_values.size() != node.causal_coeffs.size())
    fail(ErrorCode::dimension_mismatch,
         "node " + node.id + ": parent value count != coefficient count");
  Field out(static_cast<std::size_t>(node.dim()), node.causal_intercept);
  for (std::size_t p = 0; p < parent_values.size(); ++p) {
    if (parent_values[p].size() != out.size())
      fail(ErrorCode::dimension_mismatch, "node " + node.id + ": parent field size");
    const double a = node.causal_coeffs[p];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * parent_values[p][i];
  }
  return out;
}

namespace detail {
inline Field aligned_to(const Field& values, const LatentNode& from,
                        const LatentNode& to) {
  if (from.rows == to.rows && from.cols == to.cols &&
      std::abs(from.cell_size - to.cell_size) <= 1e-12 * to.cell_size)
    return values;
  Grid g(from.rows, from.cols, from.cell_size);
  g.values = values;
  return regrid(g, to.cell_size).values;
}
}  // namespace detail

/// Ancestral sampling in topological order. Roots draw from their prior;
/// children draw z = a0 + a^T P(z) + sigma * eps. Deterministic given seed.
inline std::map<NodeId, Field> sample_prior(const CausalGraph& graph,
                                            std::uint64_t seed) {
  if (graph.topo_order.empty())
    fail(ErrorCode::config_invalid, "graph not validated");
  std::map<NodeId, Field> fields;
  for (const auto& id : graph.topo_order) {
    const LatentNode& n = graph.node(id);
    Rng rng(seed, stream_id(id), 0x5a);
    Field z(static_cast<std::size_t>(n.dim()));
    if (graph.is_root(id)) {
      for (std::size_t i = 0; i < z.size(); ++i)
        z[i] = n.prior_mean_at(i) + std::sqrt(n.prior_var_at(i)) * rng.normal();
    } else {
      std::vector<Field> pv;
      for (const auto& pid : graph.parents_of(id))
        pv.push_back(detail::aligned_to(fields.at(pid), graph.node(pid), n));
      z = causal_mean(n, pv);
      for (auto& v : z) v += n.sigma * rng.normal();
    }
    fields.emplace(id, std::move(z));
  }
  return fields;
}

/// Per-cell first and second moments of the joint linear-Gaussian latent
/// distribution, propagated analytically through the DAG. Covariances are
/// tracked per node pair under the same-resolution alignment; means are
/// regridded when resolutions differ.
struct JointMoments {
  std::vector<NodeId> order;                 // topo order
  std::map<NodeId, Field> mean;              // per-cell means
  std::map<NodeId, std::map<NodeId, Field>> cov;  // symmetric per-cell covariances

  const Field& covariance(const NodeId& a, const NodeId& b) const {
    auto it = cov.find(a);
    if (it != cov.end()) {
      auto jt = it->second.find(b);
      if (jt != it->second.end()) return jt->second;
    }
    return cov.at(b).at(a);
  }
};

inline JointMoments joint_moments(const CausalGraph& graph) {
  if (graph.topo_order.empty())
    fail(ErrorCode::config_invalid, "graph not validated");
  // Cross-node covariances assume a shared cell indexing; enforce equal dims.
  const int d0 = graph.nodes.front().dim();
  for (const auto& n : graph.nodes)
    if (n.dim() != d0)
      fail(ErrorCode::dimension_mismatch,
           "joint moments require equal latent resolutions (node " + n.id + ")");
  JointMoments jm;
  jm.order = graph.topo_order;
  const std::size_t D = static_cast<std::size_t>(d0);
  auto set_cov = [&](const NodeId& a, const NodeId& b, Field v) {
    jm.cov[a][b] = std::move(v);
  };
  for (std::size_t oi = 0; oi < jm.order.size(); ++oi) {
    const NodeId& id = jm.order[oi];
    const LatentNode& n = graph.node(id);
    const auto parents = graph.parents_of(id);
    if (parents.empty()) {
      Field mu(D), var(D);
      for (std::size_t c = 0; c < D; ++c) {
        mu[c] = n.prior_mean_at(c);
        var[c] = n.prior_var_at(c);
      }
      jm.mean[id] = std::move(mu);
      // roots are mutually independent
      for (std::size_t oj = 0; oj < oi; ++oj)
        set_cov(id, jm.order[oj], Field(D, 0.0));
      set_cov(id, id, std::move(var));
      continue;
    }
    std::vector<Field> pmeans;
    for (const auto& pid : parents)
      pmeans.push_back(detail::aligned_to(jm.mean.at(pid), graph.node(pid), n));
    jm.mean[id] = causal_mean(n, pmeans);
    // Cov(z_i, z_j) = sum_k a_k Cov(p_k, z_j) for previously placed j.
    for (std::size_t oj = 0; oj < oi; ++oj) {
      const NodeId& jd = jm.order[oj];
      Field cv(D, 0.0);
      for (std::size_t p = 0; p < parents.size(); ++p) {
        const Field& cpj = jm.covariance(parents[p], jd);
        for (std::size_t c = 0; c < D; ++c) cv[c] += n.causal_coeffs[p] * cpj[c];
      }
      set_cov(id, jd, std::move(cv));
    }
    Field var(D, n.sigma * n.sigma);
    for (std::size_t p = 0; p < parents.size(); ++p)
      for (std::size_t q = 0; q < parents.size(); ++q) {
        const Field& cpq = jm.covariance(parents[p], parents[q]);
        const double aa = n.causal_coeffs[p] * n.causal_coeffs[q];
        for (std::size_t c = 0; c < D; ++c) var[c] += aa * cpq[c];
      }
    set_cov(id, id, std::move(var));
  }
  return jm;
}

}  // namespace cascade
