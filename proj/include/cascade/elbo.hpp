#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/graph.hpp"
#include "cascade/kde.hpp"
#include "cascade/observation.hpp"
#include "cascade/parallel.hpp"
#include "cascade/sampler.hpp"

namespace cascade {

inline double log_normal_pdf(double x, double mean, double var) {
  if (!(var > 0.0)) fail(ErrorCode::singular_covariance, "zero variance density");
  const double d = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * std::log(var) -
         0.5 * d * d / var;
}

/// Log-normal observation log-likelihood for one source, summed over its
/// cells: log y | parents ~ N(C, D) with C = theta0 + theta^T mu_P and
/// D = theta^T Sigma_P theta + eta^2 (diagonal form), plus the -log y
/// Jacobian of the exp link. `parent_vars` may be null for exact parent
/// values (D reduces to eta^2).
inline double likelihood_term(const Grid& y, const ObservationSource& src,
                              const std::vector<Field>& parent_means,
                              const std::vector<Field>* parent_vars = nullptr) {
  src.validate_fields();
  if (parent_means.size() != src.parent_ids.size())
    fail(ErrorCode::dimension_mismatch, "likelihood_term: parent field count");
  for (const auto& f : parent_means)
    if (f.size() != y.size())
      fail(ErrorCode::dimension_mismatch, "likelihood_term: parent field size");
  if (parent_vars) {
    if (parent_vars->size() != src.parent_ids.size())
      fail(ErrorCode::dimension_mismatch, "likelihood_term: parent var count");
    for (const auto& f : *parent_vars)
      if (f.size() != y.size())
        fail(ErrorCode::dimension_mismatch, "likelihood_term: parent var size");
  }
  std::vector<double> cellwise(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y.values[i] > 0.0))
      fail(ErrorCode::non_positive_observation, "likelihood_term: y <= 0");
    const double log_y = std::log(y.values[i]);
    double c = src.theta0;
    double d = src.eta * src.eta;
    for (std::size_t p = 0; p < parent_means.size(); ++p) {
      c += src.thetas[p] * parent_means[p][i];
      if (parent_vars) d += src.thetas[p] * src.thetas[p] * (*parent_vars)[p][i];
    }
    if (!(d > 0.0)) fail(ErrorCode::singular_covariance, "likelihood_term: D <= 0");
    cellwise[i] = log_normal_pdf(log_y, c, d) - log_y;
  }
  return pairwise_sum(cellwise);
}

namespace detail {
// One posterior sample (matched index across nodes) of each latent field.
inline std::map<NodeId, const Field*> sample_slice(
    const std::map<NodeId, PosteriorEnsemble>& ensembles, int m) {
  std::map<NodeId, const Field*> out;
  for (const auto& [id, ens] : ensembles)
    out.emplace(id, &ens.samples[static_cast<std::size_t>(m)]);
  return out;
}
}  // namespace detail

/// Average over matched samples of sum_i log N(z_i; mu_{z|P}, sigma_i^2)
/// using the linear-Gaussian causal conditionals; roots use their prior.
inline double prior_term(const CausalGraph& graph,
                         const std::map<NodeId, PosteriorEnsemble>& ensembles) {
  const int m_count = ensembles.begin()->second.M();
  std::vector<double> per_sample(static_cast<std::size_t>(m_count), 0.0);
  for (int m = 0; m < m_count; ++m) {
    auto slice = detail::sample_slice(ensembles, m);
    std::vector<double> parts;
    for (const auto& id : graph.topo_order) {
      const LatentNode& node = graph.node(id);
      const Field& z = *slice.at(id);
      if (graph.is_root(id)) {
        for (std::size_t i = 0; i < z.size(); ++i)
          parts.push_back(log_normal_pdf(z[i], node.prior_mean_at(i),
                                         std::max(node.prior_var_at(i), 1e-12)));
      } else {
        std::vector<Field> pv;
        for (const auto& pid : graph.parents_of(id))
          pv.push_back(detail::aligned_to(*slice.at(pid), graph.node(pid), node));
        const Field mu = causal_mean(node, pv);
        const double var = node.sigma * node.sigma;
        for (std::size_t i = 0; i < z.size(); ++i)
          parts.push_back(log_normal_pdf(z[i], mu[i], var));
      }
    }
    per_sample[static_cast<std::size_t>(m)] = pairwise_sum(parts);
  }
  return pairwise_sum(per_sample) / static_cast<double>(m_count);
}

/// ELBO decomposition; elbo = likelihood_term + prior_term + entropy_term by
/// construction (entropy_term carries the minus sign of the log q term).
struct ElboReport {
  double likelihood_term = 0.0;
  double prior_term = 0.0;
  double entropy_term = 0.0;
  double elbo = 0.0;
  std::map<NodeId, double> node_entropy;
};

/// Assembles the variational bound (1/(L M)) sum over locations and samples
/// of [log p(y|z) + log p(z|parents) - log q(z)]. The KDE entropy term keeps
/// every sample in the sum (leave-self-in). L is the latent cell count.
inline ElboReport elbo(const CausalGraph& graph,
                       const std::map<NodeId, PosteriorEnsemble>& ensembles,
                       const std::vector<ObservationSource>& sources) {
  if (ensembles.empty()) fail(ErrorCode::degenerate_ensemble, "elbo: no ensembles");
  const int m_count = ensembles.begin()->second.M();
  const double L = static_cast<double>(graph.node(graph.topo_order.front()).dim());
  const double norm = 1.0 / (L * static_cast<double>(m_count));

  ElboReport rep;
  // term [1]: per-sample conditional observation likelihood
  {
    std::vector<double> per_sample(static_cast<std::size_t>(m_count), 0.0);
    for (int m = 0; m < m_count; ++m) {
      auto slice = detail::sample_slice(ensembles, m);
      std::vector<double> parts;
      for (const auto& src : sources) {
        if (src.grid.size() == 0) continue;
        std::vector<Field> pmeans;
        for (const auto& pid : src.parent_ids) {
          const LatentNode& pn = graph.node(pid);
          Grid g(pn.rows, pn.cols, pn.cell_size);
          g.values = *slice.at(pid);
          pmeans.push_back(regrid(g, src.cell_size).values);
        }
        parts.push_back(likelihood_term(src.grid, src, pmeans));
      }
      per_sample[static_cast<std::size_t>(m)] = pairwise_sum(parts);
    }
    rep.likelihood_term = pairwise_sum(per_sample) * norm;
  }
  // term [2]: prior_term already averages over samples
  rep.prior_term = prior_term(graph, ensembles) / L;
  // term [3]: per-cell univariate KDE across the ensemble, leave-self-in
  {
    std::vector<double> per_node;
    std::vector<double> vals(static_cast<std::size_t>(m_count));
    for (const auto& [id, ens] : ensembles) {
      std::vector<double> parts;
      const std::size_t dim = ens.samples.front().size();
      for (std::size_t c = 0; c < dim; ++c) {
        for (int m = 0; m < m_count; ++m)
          vals[static_cast<std::size_t>(m)] = ens.samples[static_cast<std::size_t>(m)][c];
        for (int m = 0; m < m_count; ++m)
          parts.push_back(kde_logdensity_1d(vals.data(), vals.size(), ens.bandwidth[c],
                                            vals[static_cast<std::size_t>(m)]));
      }
      const double node_sum = pairwise_sum(parts);
      rep.node_entropy[id] = -node_sum * norm;
      per_node.push_back(node_sum);
    }
    rep.entropy_term = -pairwise_sum(per_node) * norm;
  }
  rep.elbo = rep.likelihood_term + rep.prior_term + rep.entropy_term;
  if (!std::isfinite(rep.elbo)) fail(ErrorCode::diverged, "elbo non-finite");
  return rep;
}

}  // namespace cascade
