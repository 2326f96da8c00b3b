#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/graph.hpp"
#include "cascade/grid.hpp"
#include "cascade/rng.hpp"

namespace cascade {

/// One background-knowledge layer at its native resolution, linked to the
/// latent space through a log-normal model:
///   log y = theta0 + theta^T P(y) + eta * eps.
struct ObservationSource {
  std::string source_id;
  NodeId node_id;                    // latent variable this source observes
  std::vector<NodeId> parent_ids;    // latents entering the link; node_id included
  int resolution_k = 0;              // resolution index (higher = finer)
  double cell_size = 1.0;
  double theta0 = 0.0;
  std::vector<double> thetas;        // aligned with parent_ids
  double eta = 0.1;                  // log-noise scale; > 0
  Grid grid;                         // observed values, when materialized

  void validate_fields() const {
    if (eta <= 0.0) fail(ErrorCode::config_invalid, "source " + source_id + ": eta must be > 0");
    if (cell_size <= 0.0)
      fail(ErrorCode::config_invalid, "source " + source_id + ": cell size must be > 0");
    if (thetas.size() != parent_ids.size())
      fail(ErrorCode::dimension_mismatch, "source " + source_id + ": theta count");
  }

  double theta_for(const NodeId& id) const {
    for (std::size_t i = 0; i < parent_ids.size(); ++i)
      if (parent_ids[i] == id) return thetas[i];
    fail(ErrorCode::dimension_mismatch,
         "source " + source_id + " has no parent " + id);
  }
};

/// Draws y = exp(theta0 + theta^T P(y) + eta*eps) on the source's grid.
/// Parent fields are given at the latents' native resolutions and are
/// regridded here.
inline Grid observe(const std::map<NodeId, Field>& latents, const CausalGraph& graph,
                    const ObservationSource& src, std::uint64_t seed,
                    int obs_rows, int obs_cols) {
  src.validate_fields();
  Grid y(obs_rows, obs_cols, src.cell_size);
  std::vector<Field> pv;
  for (const auto& pid : src.parent_ids) {
    const LatentNode& pn = graph.node(pid);
    Grid g(pn.rows, pn.cols, pn.cell_size);
    g.values = latents.at(pid);
    Grid aligned = regrid(g, src.cell_size);
    if (aligned.rows != obs_rows || aligned.cols != obs_cols)
      fail(ErrorCode::dimension_mismatch, "source " + src.source_id + ": grid shape");
    pv.push_back(std::move(aligned.values));
  }
  Rng rng(seed, stream_id(src.source_id), 0x0b);
  for (std::size_t i = 0; i < y.size(); ++i) {
    double log_y = src.theta0;
    for (std::size_t p = 0; p < pv.size(); ++p) log_y += src.thetas[p] * pv[p][i];
    log_y += src.eta * rng.normal();
    y.values[i] = std::exp(log_y);
  }
  return y;
}

/// Inverts the log-normal link for the target latent:
///   phi = (log y - theta0 - theta_{P \ z}^T (P(y) \ z)) / theta_z,
/// regridded to the latent's native resolution. `other_parents` supplies the
/// non-target parent fields at the observation resolution.
inline Field phi_map(const Grid& y, const ObservationSource& src,
                     const LatentNode& target,
                     const std::map<NodeId, Field>& other_parents = {}) {
  const double theta_z = src.theta_for(target.id);
  if (std::abs(theta_z) < 1e-12)
    fail(ErrorCode::degenerate_link, "source " + src.source_id + ": theta_z is zero");
  Grid phi(y.rows, y.cols, y.cell_size);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y.values[i] > 0.0))
      fail(ErrorCode::non_positive_observation,
           "source " + src.source_id + ": observation must be strictly positive");
    phi.values[i] = std::log(y.values[i]) - src.theta0;
  }
  for (std::size_t p = 0; p < src.parent_ids.size(); ++p) {
    if (src.parent_ids[p] == target.id) continue;
    auto it = other_parents.find(src.parent_ids[p]);
    if (it == other_parents.end())
      fail(ErrorCode::dimension_mismatch,
           "phi_map missing parent field " + src.parent_ids[p]);
    if (it->second.size() != phi.size())
      fail(ErrorCode::dimension_mismatch, "phi_map parent field size");
    for (std::size_t i = 0; i < phi.size(); ++i)
      phi.values[i] -= src.thetas[p] * it->second[i];
  }
  for (auto& v : phi.values) v /= theta_z;
  return regrid(phi, target.cell_size).values;
}

struct InitResult {
  Field z0;
  bool used_fallback = false;  // no observation; fell back to the prior mean
};

namespace detail {
inline const ObservationSource* finest_source(
    const std::vector<const ObservationSource*>& sources) {
  const ObservationSource* best = nullptr;
  for (const auto* s : sources)
    if (!best || s->cell_size < best->cell_size ||
        (s->cell_size == best->cell_size && s->resolution_k > best->resolution_k))
      best = s;
  return best;
}
}  // namespace detail

/// Parent-node initialization: phi of the finest-resolution source. Nodes
/// without any source fall back to the prior mean (flagged).
inline InitResult init_parent(const LatentNode& node,
                              const std::vector<const ObservationSource*>& sources,
                              const std::map<NodeId, Field>& other_parents = {}) {
  const ObservationSource* finest = detail::finest_source(sources);
  if (!finest) {
    Field z0(static_cast<std::size_t>(node.dim()));
    for (std::size_t i = 0; i < z0.size(); ++i) z0[i] = node.prior_mean_at(i);
    return {std::move(z0), true};
  }
  return {phi_map(finest->grid, *finest, node, other_parents), false};
}

/// Hybrid child initialization: a0 + a^T P(z)(0) + a_phi*phi(y) + a_eps*eps.
/// Without a source the observational term is dropped.
inline InitResult init_child(const LatentNode& node,
                             const std::vector<Field>& parent_states,
                             const std::vector<const ObservationSource*>& sources,
                             std::uint64_t seed,
                             const std::map<NodeId, Field>& other_parents = {}) {
  Field z0 = causal_mean(node, parent_states);
  bool fallback = true;
  if (const ObservationSource* finest = detail::finest_source(sources)) {
    const Field phi = phi_map(finest->grid, *finest, node, other_parents);
    if (phi.size() != z0.size())
      fail(ErrorCode::dimension_mismatch, "init_child: phi field size");
    for (std::size_t i = 0; i < z0.size(); ++i) z0[i] += node.obs_weight * phi[i];
    fallback = false;
  }
  if (node.noise_weight > 0.0) {
    Rng rng(seed, stream_id(node.id), 0xc0);
    for (auto& v : z0) v += node.noise_weight * rng.normal();
  }
  return {std::move(z0), fallback};
}

}  // namespace cascade
