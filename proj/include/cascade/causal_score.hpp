#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/graph.hpp"
#include "cascade/mlp.hpp"
#include "cascade/sde.hpp"

namespace cascade {

/// Pointwise score evaluator: s(z, t) and its state derivative.
struct ScoreFn {
  std::function<double(double z, double t)> value;
  std::function<double(double z, double t)> slope;
};

/// Workspace-backed evaluator of the score model for one node. The net
/// predicts the scaled residual sqrt(Sigma(t)) * s (unit-variance noise), so
/// the score is net(z, t/T) / sqrt(Sigma(t)). Not thread-safe; make one per
/// worker.
class NetScore {
 public:
  NetScore(const Mlp& net, const NodeSde& sde) : net_(&net), sde_(&sde) {
    // evaluations below the variance floor reuse the floor scale
    var_floor_ = kernel_sigma(sde, 1e-3 * sde.horizon);
  }

  double value(double z, double t) {
    const double in[2] = {z, t / sde_->horizon};
    mlp_forward(*net_, in, ws_);
    return ws_.act.back()[0] * inv_sqrt_var(t);
  }

  double slope(double z, double t) {
    const double in[2] = {z, t / sde_->horizon};
    const double up[1] = {1.0};
    mlp_forward(*net_, in, ws_);
    mlp_input_grad(*net_, up, ws_);
    return ws_.delta[0][0] * inv_sqrt_var(t);
  }

  ScoreFn as_score_fn() {
    return {[this](double z, double t) { return value(z, t); },
            [this](double z, double t) { return slope(z, t); }};
  }

 private:
  double inv_sqrt_var(double t) {
    if (t != cached_t_) {
      cached_t_ = t;
      const double var = std::max(kernel_sigma(*sde_, t), var_floor_);
      cached_scale_ = 1.0 / std::sqrt(var);
    }
    return cached_scale_;
  }

  const Mlp* net_;
  const NodeSde* sde_;
  double var_floor_ = 1e-12;
  double cached_t_ = -1.0;
  double cached_scale_ = 1.0;
  MlpWorkspace ws_;
};

/// Allocating convenience wrapper (tests, cold paths).
inline ScoreFn score_fn_from_net(const Mlp& net, const NodeSde& sde) {
  auto state = std::make_shared<NetScore>(net, sde);
  return {[state](double z, double t) { return state->value(z, t); },
          [state](double z, double t) { return state->slope(z, t); }};
}

/// Joint Gaussian moments of (parents, z_i) at one cell.
struct CellMoments {
  Eigen::VectorXd mu_p;     // parent means
  Eigen::MatrixXd sigma_p;  // parent covariance
  Eigen::VectorXd cross;    // Cov(P(z_i), z_i)
  double mu_i = 0.0;        // marginal mean of z_i
  double var_i = 1.0;       // marginal variance of z_i
};

inline CellMoments cell_moments(const JointMoments& jm, const CausalGraph& graph,
                                const NodeId& id, std::size_t cell) {
  const auto parents = graph.parents_of(id);
  const int p = static_cast<int>(parents.size());
  CellMoments m;
  m.mu_p.resize(p);
  m.sigma_p.resize(p, p);
  m.cross.resize(p);
  for (int a = 0; a < p; ++a) {
    m.mu_p(a) = jm.mean.at(parents[static_cast<std::size_t>(a)])[cell];
    m.cross(a) = jm.covariance(parents[static_cast<std::size_t>(a)], id)[cell];
    for (int b = 0; b < p; ++b)
      m.sigma_p(a, b) = jm.covariance(parents[static_cast<std::size_t>(a)],
                                      parents[static_cast<std::size_t>(b)])[cell];
  }
  m.mu_i = jm.mean.at(id)[cell];
  m.var_i = jm.covariance(id, id)[cell];
  return m;
}

/// Gaussian conditional of the parent vector given z_i = z.
struct ParentConditional {
  Eigen::VectorXd mu_c;
  Eigen::MatrixXd sigma_c;
  Eigen::VectorXd cross;   // Sigma_{P,z}
  double self_var = 1.0;   // Sigma_z
  Eigen::VectorXd mu_p;    // parent marginal mean
};

// Eigenvalue floor applied to covariances before inversion.
constexpr double kCovarianceRidge = 1e-8;

inline ParentConditional parent_conditional(const CellMoments& m, double z_value) {
  ParentConditional pc;
  double var_i = m.var_i;
  if (var_i < kCovarianceRidge) var_i += kCovarianceRidge;
  if (!(var_i > 0.0))
    fail(ErrorCode::singular_covariance, "parent_conditional: zero self variance");
  pc.self_var = m.var_i;
  pc.cross = m.cross;
  pc.mu_p = m.mu_p;
  pc.mu_c = m.mu_p + m.cross * ((z_value - m.mu_i) / var_i);
  pc.sigma_c = m.sigma_p - (m.cross * m.cross.transpose()) / var_i;
  // floor tiny negative eigenvalues from cancellation
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pc.sigma_c);
  if (es.info() == Eigen::Success && es.eigenvalues().minCoeff() < 0.0) {
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    pc.sigma_c = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  }
  return pc;
}

/// Local-linearization posterior variance of z_i given z_i(t):
///   Sigma_{z|z(t)} = Sigma_z - Sigma_z J (J Sigma_z J + Sigma_i(t))^{-1} J Sigma_z.
struct StabilizedCov {
  double jacobian = 1.0;    // d mu(z, t) / d z at z_hat
  double sigma_post = 0.0;  // Sigma_{z|z(t)}
};

inline StabilizedCov stabilize(double prior_var, double var_t, double jacobian) {
  if (!std::isfinite(jacobian))
    fail(ErrorCode::non_finite_gradient, "stabilize: non-finite jacobian");
  const double inner = jacobian * prior_var * jacobian + var_t;
  if (!(inner > 0.0))
    fail(ErrorCode::singular_inner_matrix, "stabilize: singular inner matrix");
  StabilizedCov st;
  st.jacobian = jacobian;
  st.sigma_post =
      prior_var - prior_var * jacobian * (1.0 / inner) * jacobian * prior_var;
  if (st.sigma_post < 0.0) st.sigma_post = 0.0;
  return st;
}

/// Effective likelihood covariance: the parent conditional widened by the
/// denoising uncertainty propagated through the conditional-mean slope
/// b = Sigma_{P,z} / Sigma_z. Collapses to Sigma_c exactly when
/// Sigma_i(t) = 0.
inline Eigen::MatrixXd effective_cov(const ParentConditional& pc,
                                     const StabilizedCov& st) {
  double var_i = pc.self_var;
  if (var_i < kCovarianceRidge) var_i += kCovarianceRidge;
  const Eigen::VectorXd b = pc.cross / var_i;
  return pc.sigma_c + st.sigma_post * (b * b.transpose());
}

// Per-time cache of (m, c) linearizations; valid only while the mean
// recursion is affine in the target's initial state (zero drift nets).
struct MuLinCache {
  std::mutex lock;
  std::map<double, std::pair<Field, Field>> by_t;
};

namespace detail {
inline bool drift_is_zero(const MuSystem& sys) {
  for (const auto& nd : sys.nodes) {
    for (const auto& layer : nd.sde->drift.w)
      for (double v : layer)
        if (v != 0.0) return false;
    for (const auto& layer : nd.sde->drift.b)
      for (double v : layer)
        if (v != 0.0) return false;
  }
  return true;
}
}  // namespace detail

/// Tweedie denoising of a diffused field. The mean recursion is linearized as
/// mu(t, z) ~= m(t) z + c(t) around the first-pass estimate obtained with
/// factor 1 and offset 0, then refined once:
///   z_hat = (z_t - c(t) + Sigma(t) s(z_t, t)) / m(t).
struct TweedieResult {
  Field zhat;
  Field mean_scale;   // m(t) per cell
  Field mean_offset;  // c(t) per cell
  Field score;        // s(z_t, t)
  Field dzhat_dz;     // (1 + Sigma(t) ds/dz) / m(t)
};

inline TweedieResult tweedie_denoise(const Field& zt, double t, const ScoreFn& score,
                                     const MuSystem& system,
                                     const std::vector<Field>& inits,
                                     std::size_t target_index, double var_t,
                                     MuLinCache* cache = nullptr) {
  TweedieResult out;
  const std::size_t n = zt.size();
  out.zhat.resize(n);
  out.score.resize(n);
  out.dzhat_dz.resize(n);
  Field zhat0(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.score[i] = score.value(zt[i], t);
    zhat0[i] = zt[i] + var_t * out.score[i];
  }
  const int n_steps = system.nodes[target_index].sde->steps;
  bool from_cache = false;
  if (cache) {
    std::lock_guard<std::mutex> g(cache->lock);
    auto it = cache->by_t.find(t);
    if (it != cache->by_t.end()) {
      out.mean_scale = it->second.first;
      out.mean_offset = it->second.second;
      from_cache = true;
    }
  }
  if (!from_cache) {
    std::vector<Field> lin_inits = inits;
    lin_inits[target_index] = zhat0;
    MuLinearization lin =
        linearize_mu(system, target_index, std::move(lin_inits), t, n_steps);
    out.mean_scale = std::move(lin.m);
    out.mean_offset = std::move(lin.c);
    if (cache) {
      std::lock_guard<std::mutex> g(cache->lock);
      cache->by_t.emplace(t, std::make_pair(out.mean_scale, out.mean_offset));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double m = out.mean_scale[i];
    if (std::abs(m) < 1e-8)
      fail(ErrorCode::degenerate_mean_scale, "tweedie: |mean scale| < 1e-8");
    out.zhat[i] = (zt[i] - out.mean_offset[i] + var_t * out.score[i]) / m;
    out.dzhat_dz[i] = (1.0 + var_t * score.slope(zt[i], t)) / m;
    if (!std::isfinite(out.zhat[i]))
      fail(ErrorCode::non_finite_state, "tweedie: non-finite estimate");
  }
  return out;
}

/// Precomputed per-node data for assembling conditional scores.
struct CausalScoreContext {
  const CausalGraph* graph = nullptr;
  NodeId id;
  const NodeSde* sde = nullptr;
  MuSystem system;           // target plus any drift-visible parents, target last
  std::vector<Field> inits;  // initial fields aligned with system nodes
  std::size_t target_index = 0;
  std::vector<CellMoments> cells;
  bool affine_mu = false;  // zero drift: linearization independent of state
  std::shared_ptr<MuLinCache> cache;

  bool has_parents() const {
    return !cells.empty() && cells.front().mu_p.size() > 0;
  }
};

inline CausalScoreContext make_causal_context(const CausalGraph& graph,
                                              const JointMoments& jm,
                                              const NodeId& id, const NodeSde& sde,
                                              MuSystem system,
                                              std::vector<Field> inits,
                                              std::size_t target_index) {
  CausalScoreContext ctx;
  ctx.graph = &graph;
  ctx.id = id;
  ctx.sde = &sde;
  ctx.system = std::move(system);
  ctx.inits = std::move(inits);
  ctx.target_index = target_index;
  ctx.affine_mu = detail::drift_is_zero(ctx.system);
  if (ctx.affine_mu) ctx.cache = std::make_shared<MuLinCache>();
  const std::size_t dim = ctx.inits[ctx.target_index].size();
  ctx.cells.reserve(dim);
  for (std::size_t c = 0; c < dim; ++c)
    ctx.cells.push_back(cell_moments(jm, graph, id, c));
  return ctx;
}

/// Gradient of log p(P(z_i) | z_t) with respect to z_t, assembled through the
/// chain d logN / d mu_c * d mu_c / d z_hat * d z_hat / d z_t.
inline Field causal_grad(const std::vector<Field>& parent_obs, const Field& zt,
                         double t, const ScoreFn& score,
                         const CausalScoreContext& ctx) {
  if (!ctx.has_parents()) return Field(zt.size(), 0.0);
  const std::size_t n = zt.size();
  const std::size_t p = static_cast<std::size_t>(ctx.cells.front().mu_p.size());
  if (parent_obs.size() != p)
    fail(ErrorCode::dimension_mismatch, "causal_grad: parent observation count");
  for (const auto& f : parent_obs)
    if (f.size() != n)
      fail(ErrorCode::dimension_mismatch, "causal_grad: parent field size");

  const double var_t = kernel_sigma(*ctx.sde, t);
  TweedieResult tw = tweedie_denoise(zt, t, score, ctx.system, ctx.inits,
                                     ctx.target_index, var_t, ctx.cache.get());
  // jacobian of the mean map at z_hat; equals the Tweedie scale in the affine
  // case, otherwise one more finite-difference pass
  Field jac;
  if (ctx.affine_mu) {
    jac = tw.mean_scale;
  } else {
    std::vector<Field> jac_inits = ctx.inits;
    jac_inits[ctx.target_index] = tw.zhat;
    jac = linearize_mu(ctx.system, ctx.target_index, std::move(jac_inits), t,
                       ctx.sde->steps)
              .m;
  }

  Field grad(n);
  Eigen::VectorXd resid(static_cast<int>(p)), b(static_cast<int>(p));
  Eigen::MatrixXd sigma_eff(static_cast<int>(p), static_cast<int>(p));
  for (std::size_t i = 0; i < n; ++i) {
    ParentConditional pc = parent_conditional(ctx.cells[i], tw.zhat[i]);
    StabilizedCov st = stabilize(ctx.cells[i].var_i, var_t, jac[i]);
    sigma_eff = effective_cov(pc, st);
    double var_i = pc.self_var;
    if (var_i < kCovarianceRidge) var_i += kCovarianceRidge;
    b = pc.cross / var_i;
    for (std::size_t a = 0; a < p; ++a)
      resid(static_cast<int>(a)) = parent_obs[a][i] - pc.mu_c(static_cast<int>(a));
    Eigen::LLT<Eigen::MatrixXd> llt(sigma_eff);
    if (llt.info() != Eigen::Success) {
      sigma_eff.diagonal().array() += kCovarianceRidge;
      llt.compute(sigma_eff);
      if (llt.info() != Eigen::Success)
        fail(ErrorCode::singular_covariance, "causal_grad: effective covariance");
    }
    grad[i] = b.dot(llt.solve(resid)) * tw.dzhat_dz[i];
    if (!std::isfinite(grad[i]))
      fail(ErrorCode::non_finite_gradient, "causal_grad: non-finite gradient");
  }
  return grad;
}

/// Conditional score: unconditional score plus the causal gradient. Root
/// nodes return the unconditional score unchanged.
inline Field conditional_score(const Field& zt, double t, const ScoreFn& score,
                               const std::vector<Field>& parent_obs,
                               const CausalScoreContext& ctx) {
  Field s(zt.size());
  for (std::size_t i = 0; i < zt.size(); ++i) s[i] = score.value(zt[i], t);
  if (!ctx.has_parents()) return s;
  const Field cg = causal_grad(parent_obs, zt, t, score, ctx);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] += cg[i];
  return s;
}

}  // namespace cascade
