#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <vector>

#include "cascade/causal_score.hpp"
#include "cascade/error.hpp"
#include "cascade/graph.hpp"
#include "cascade/kde.hpp"
#include "cascade/parallel.hpp"
#include "cascade/sde.hpp"

namespace cascade {

/// One reverse-time Euler-Maruyama step from t to t - dt:
///   z' = z - [f - g^2 s + lambda (phi - z)] dt + g sqrt(dt) eps.
/// `cond_score` is the conditional score already evaluated at (z, t).
inline Field reverse_step(const Field& z, double t, double dt, const NodeSde& sde,
                          const Field& cond_score,
                          const std::vector<Field>& frozen_parents,
                          const Guidance* guidance, Rng& rng) {
  const int np = sde.parent_count();
  if (static_cast<int>(frozen_parents.size()) != np)
    fail(ErrorCode::dimension_mismatch, "reverse_step: parent count");
  if (cond_score.size() != z.size())
    fail(ErrorCode::dimension_mismatch, "reverse_step: score field size");
  MlpWorkspace ws_f, ws_g;
  std::vector<double> fin, pvals(static_cast<std::size_t>(np));
  const double lam = sde.lambda.value(t, sde.horizon);
  const double gt = sde.g(t, ws_g);
  const double g2 = gt * gt;
  const double sqrt_dt = std::sqrt(dt);
  Field out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    for (int p = 0; p < np; ++p) pvals[static_cast<std::size_t>(p)] = frozen_parents[p][i];
    double drift = sde.f(z[i], pvals.data(), t, ws_f, fin) - g2 * cond_score[i];
    if (guidance && lam > 0.0) drift += lam * guidance->pull(z[i], i);
    out[i] = z[i] - drift * dt + gt * sqrt_dt * rng.normal();
    if (!std::isfinite(out[i]))
      fail(ErrorCode::non_finite_state, "reverse_step: diverged");
  }
  return out;
}

/// Langevin Monte Carlo correction z' = z + kappa s + sqrt(2 kappa) Sigma^{1/2} eps,
/// with `score` evaluated at the input state.
inline Field langevin_correct(const Field& z, const Field& score, double var_t,
                              double kappa, Rng& rng) {
  if (kappa < 0.0) fail(ErrorCode::config_invalid, "langevin: kappa must be >= 0");
  if (score.size() != z.size())
    fail(ErrorCode::dimension_mismatch, "langevin: score size");
  if (kappa == 0.0) return z;
  const double noise = std::sqrt(2.0 * kappa) * std::sqrt(std::max(var_t, 0.0));
  Field out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    out[i] = z[i] + kappa * score[i] + noise * rng.normal();
  return out;
}

/// M reverse-diffusion samples of z(0) for one node, plus per-cell Scott
/// bandwidths for the KDE entropy term.
struct PosteriorEnsemble {
  NodeId node_id;
  std::vector<Field> samples;
  Field bandwidth;

  int M() const { return static_cast<int>(samples.size()); }

  void finalize() {
    if (samples.size() < 2)
      fail(ErrorCode::degenerate_ensemble, "ensemble needs M >= 2");
    for (const auto& s : samples)
      for (double v : s)
        if (!std::isfinite(v))
          fail(ErrorCode::non_finite_state, "ensemble sample non-finite");
    const std::size_t dim = samples.front().size();
    const double factor =
        std::pow(static_cast<double>(samples.size()), -1.0 / 5.0);  // D = 1 per cell
    bandwidth.assign(dim, kMinBandwidth);
    for (std::size_t c = 0; c < dim; ++c) {
      double mean = 0.0;
      for (const auto& s : samples) mean += s[c];
      mean /= static_cast<double>(samples.size());
      double var = 0.0;
      for (const auto& s : samples) var += (s[c] - mean) * (s[c] - mean);
      var /= static_cast<double>(samples.size() - 1);
      bandwidth[c] = std::max(std::sqrt(var) * factor, kMinBandwidth);
    }
  }

  Field mean() const {
    Field out(samples.front().size(), 0.0);
    for (const auto& s : samples)
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += s[i];
    for (auto& v : out) v /= static_cast<double>(samples.size());
    return out;
  }

  Field variance() const {
    const Field mu = mean();
    Field out(mu.size(), 0.0);
    for (const auto& s : samples)
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += (s[i] - mu[i]) * (s[i] - mu[i]);
    for (auto& v : out) v /= static_cast<double>(samples.size() - 1);
    return out;
  }
};

struct SamplerOptions {
  int M = 64;
  bool guidance_in_reverse = true;     // keep the lambda pull in the reverse SDE
  double langevin_kappa_scale = 0.05;  // kappa = scale * mean Sigma(t) diag
  int langevin_iters = 1;
  int threads = 1;
};

/// Everything sampling needs for one node.
struct NodeSamplingSpec {
  const NodeSde* sde = nullptr;
  const Mlp* score_net = nullptr;
  const Guidance* guidance = nullptr;  // null when unobserved
  Field init;                          // z(0) for the forward pass
};

namespace detail {
// Mean-recursion system for one node with its drift-visible parents frozen
// as zero-dynamics nodes. Owns the synthetic parent SDEs.
struct OwnedMuSystem {
  std::vector<std::unique_ptr<NodeSde>> frozen;
  MuSystem system;
  std::vector<Field> inits;
  std::size_t target_index = 0;
};

inline OwnedMuSystem make_node_mu_system(const NodeSde& sde, const Guidance* guidance,
                                         const Field& init,
                                         const std::vector<Field>& parent_inits) {
  OwnedMuSystem out;
  const int np = sde.parent_count();
  if (static_cast<int>(parent_inits.size()) < np)
    fail(ErrorCode::dimension_mismatch, "mu system: drift parent init count");
  MuNode target{&sde, guidance, {}};
  for (int p = 0; p < np; ++p) {
    out.frozen.push_back(std::make_unique<NodeSde>(
        make_basic_sde(sde.node_id + "#p" + std::to_string(p), 1e-9, sde.horizon,
                       sde.steps)));
    out.system.nodes.push_back({out.frozen.back().get(), nullptr, {}});
    out.inits.push_back(parent_inits[static_cast<std::size_t>(p)]);
    target.parent_index.push_back(p);
  }
  out.system.nodes.push_back(target);
  out.inits.push_back(init);
  out.target_index = out.system.nodes.size() - 1;
  return out;
}
}  // namespace detail

/// Reverse-diffusion posterior sampling over the whole graph. Parents are
/// sampled before children (topological order); child trajectory m conditions
/// on its parents' trajectory m through the causal score.
inline std::map<NodeId, PosteriorEnsemble> sample_posterior(
    const CausalGraph& graph, const std::map<NodeId, NodeSamplingSpec>& specs,
    const JointMoments& jm, std::uint64_t seed, const SamplerOptions& opts) {
  if (opts.M < 2) fail(ErrorCode::degenerate_ensemble, "sampler needs M >= 2");
  std::map<NodeId, PosteriorEnsemble> out;
  for (const auto& id : graph.topo_order) {
    const auto it = specs.find(id);
    if (it == specs.end())
      fail(ErrorCode::training_missing, "no sampling spec for " + id);
    const NodeSamplingSpec& spec = it->second;
    const NodeSde& sde = *spec.sde;
    sde.check();
    const LatentNode& node = graph.node(id);
    const auto parent_ids = graph.parents_of(id);
    const bool has_parents = !parent_ids.empty();

    // Parent fields for the drift input (frozen at their initializations).
    std::vector<Field> drift_parents;
    if (sde.parent_count() > 0) {
      if (sde.parent_count() != static_cast<int>(parent_ids.size()))
        fail(ErrorCode::dimension_mismatch,
             "node " + id + ": drift parent count != graph parent count");
      for (const auto& pid : parent_ids)
        drift_parents.push_back(
            detail::aligned_to(specs.at(pid).init, graph.node(pid), node));
    }

    auto mu_sys = detail::make_node_mu_system(sde, spec.guidance, spec.init, drift_parents);
    CausalScoreContext ctx =
        make_causal_context(graph, jm, id, sde, std::move(mu_sys.system),
                            std::move(mu_sys.inits), mu_sys.target_index);
    // keep frozen parent sdes alive for the context's lifetime
    const auto frozen_keepalive = std::move(mu_sys.frozen);

    const double dt = sde.dt();
    PosteriorEnsemble ens;
    ens.node_id = id;
    ens.samples.assign(static_cast<std::size_t>(opts.M), Field());

    parallel_for(static_cast<std::size_t>(opts.M), opts.threads, [&](std::size_t m) {
      NetScore net_score(*spec.score_net, sde);
      ScoreFn score = net_score.as_score_fn();
      auto eval_score = [&](const Field& z, double t,
                            const std::vector<Field>& parent_obs) {
        if (has_parents) return conditional_score(z, t, score, parent_obs, ctx);
        Field v(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) v[i] = net_score.value(z[i], t);
        return v;
      };
      auto traj = forward_path(sde, spec.init, drift_parents, spec.guidance, seed, m);
      Field z = traj.back();
      std::vector<Field> parent_obs;
      if (has_parents)
        for (const auto& pid : parent_ids)
          parent_obs.push_back(
              detail::aligned_to(out.at(pid).samples[m], graph.node(pid), node));
      Rng rng(seed, stream_id(id), 0x4e, m);
      for (int k = 0; k < sde.steps; ++k) {
        const double t = sde.horizon - k * dt;
        const Field s = eval_score(z, t, parent_obs);
        z = reverse_step(z, t, dt, sde, s, drift_parents,
                         opts.guidance_in_reverse ? spec.guidance : nullptr, rng);
        const double t_next = t - dt;
        if (opts.langevin_iters > 0 && t_next >= dt - 1e-12 &&
            opts.langevin_kappa_scale > 0.0) {
          const double var_next = kernel_sigma(sde, t_next);
          const double kappa = opts.langevin_kappa_scale * var_next;
          for (int li = 0; li < opts.langevin_iters; ++li) {
            const Field s2 = eval_score(z, t_next, parent_obs);
            z = langevin_correct(z, s2, var_next, kappa, rng);
          }
        }
      }
      ens.samples[m] = std::move(z);
    });
    ens.finalize();
    out.emplace(id, std::move(ens));
  }
  return out;
}

}  // namespace cascade
