#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/grid.hpp"
#include "cascade/mlp.hpp"
#include "cascade/rng.hpp"

namespace cascade {

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}
inline double softplus_inverse(double y) {
  if (y <= 0.0) fail(ErrorCode::config_invalid, "softplus inverse needs y > 0");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

/// Guidance strength lambda(t) >= 0. Default decays linearly to zero at the
/// horizon so the terminal distribution is observation-free.
struct LambdaSchedule {
  double lambda0 = 0.0;
  bool linear_decay = true;

  double value(double t, double horizon) const {
    if (lambda0 <= 0.0) return 0.0;
    if (!linear_decay) return lambda0;
    const double f = 1.0 - t / horizon;
    return lambda0 * (f > 0.0 ? f : 0.0);
  }
};

/// Forward SDE for one latent node:
///   dz = { f(z, P(z), t) + lambda(t) [phi(y) - z] } dt + g(t) dW.
/// f and g are small networks applied cellwise; g passes through softplus so
/// the diffusion coefficient stays positive. Time enters the nets scaled to
/// [0, 1].
struct NodeSde {
  NodeId node_id;
  Mlp drift;       // input (z, parents..., t/T) -> 1
  Mlp diffusion;   // input (t/T) -> softplus -> g(t)
  LambdaSchedule lambda;
  double horizon = 1.0;  // T
  int steps = 64;        // N, even
  // Analytic diffusion coefficient; bypasses the net when set (exact
  // schedules in configs and oracles).
  std::function<double(double)> g_override;

  double dt() const { return horizon / steps; }

  void check() const {
    if (horizon <= 0.0) fail(ErrorCode::config_invalid, "sde horizon must be > 0");
    if (steps <= 0 || steps % 2 != 0)
      fail(ErrorCode::odd_step_count, "sde steps must be even and positive");
    if (drift.output_dim() != 1 || diffusion.output_dim() != 1 ||
        diffusion.input_dim() != 1)
      fail(ErrorCode::dimension_mismatch, "sde net shapes");
  }

  int parent_count() const { return drift.input_dim() - 2; }

  double g(double t, MlpWorkspace& ws) const {
    if (g_override) return g_override(t);
    const double x = t / horizon;
    mlp_forward(diffusion, &x, ws);
    return softplus(ws.act.back()[0]);
  }

  double g(double t) const {
    MlpWorkspace ws;
    return g(t, ws);
  }

  double f(double z, const double* parents, double t, MlpWorkspace& ws,
           std::vector<double>& in) const {
    const int np = parent_count();
    in.resize(static_cast<std::size_t>(np) + 2);
    in[0] = z;
    for (int p = 0; p < np; ++p) in[static_cast<std::size_t>(p) + 1] = parents[p];
    in[static_cast<std::size_t>(np) + 1] = t / horizon;
    mlp_forward(drift, in.data(), ws);
    return ws.act.back()[0];
  }
};

/// Builds a NodeSde with zero drift and constant diffusion g(t) = g_const.
inline NodeSde make_basic_sde(const NodeId& id, double g_const, double horizon,
                              int steps, double lambda0 = 0.0,
                              int parent_count = 0) {
  NodeSde sde;
  sde.node_id = id;
  sde.drift = Mlp({parent_count + 2, 1});
  sde.diffusion = Mlp({1, 1});
  sde.diffusion.b[0][0] = softplus_inverse(g_const);
  sde.lambda.lambda0 = lambda0;
  sde.horizon = horizon;
  sde.steps = steps;
  return sde;
}

/// Observation pull targets for one node: per-source phi fields at the
/// node's resolution. The drift contribution at time t is
///   lambda(t) * sum_k (phi_k - z).
struct Guidance {
  std::vector<Field> phi;

  bool empty() const { return phi.empty(); }

  double pull(double z, std::size_t cell) const {
    double s = 0.0;
    for (const auto& p : phi) s += p[cell] - z;
    return s;
  }
};

/// Euler-Maruyama simulation of the forward SDE. Parent fields are held
/// fixed along the path. Returns the trajectory {z(t_0), ..., z(t_N)}.
inline std::vector<Field> forward_path(const NodeSde& sde, const Field& z0,
                                       const std::vector<Field>& frozen_parents,
                                       const Guidance* guidance, std::uint64_t seed,
                                       std::uint64_t stream = 0) {
  sde.check();
  for (const auto& p : frozen_parents)
    if (p.size() != z0.size())
      fail(ErrorCode::dimension_mismatch, "forward_path: parent field size");
  const int np = sde.parent_count();
  if (static_cast<int>(frozen_parents.size()) != np)
    fail(ErrorCode::dimension_mismatch, "forward_path: parent count");
  for (double v : z0)
    if (!std::isfinite(v)) fail(ErrorCode::non_finite_state, "forward_path: z0");

  const double dt = sde.dt();
  const double sqrt_dt = std::sqrt(dt);
  std::vector<Field> traj;
  traj.reserve(static_cast<std::size_t>(sde.steps) + 1);
  traj.push_back(z0);
  Rng rng(seed, stream_id(sde.node_id), 0xf0, stream);
  MlpWorkspace ws_f, ws_g;
  std::vector<double> fin, pvals(static_cast<std::size_t>(np));
  Field z = z0;
  for (int j = 0; j < sde.steps; ++j) {
    const double t = j * dt;
    const double lam = sde.lambda.value(t, sde.horizon);
    const double gt = sde.g(t, ws_g);
    for (std::size_t i = 0; i < z.size(); ++i) {
      for (int p = 0; p < np; ++p) pvals[static_cast<std::size_t>(p)] = frozen_parents[p][i];
      double drift = sde.f(z[i], pvals.data(), t, ws_f, fin);
      if (guidance && lam > 0.0) drift += lam * guidance->pull(z[i], i);
      z[i] += drift * dt + gt * sqrt_dt * rng.normal();
      if (!std::isfinite(z[i]))
        fail(ErrorCode::non_finite_state,
             "forward_path diverged at step " + std::to_string(j));
    }
    traj.push_back(z);
  }
  return traj;
}

/// Coupled noiseless mean recursions for a node and its ancestors, advanced
/// jointly so that parent states inside f are their own co-evolved means.
struct MuNode {
  const NodeSde* sde = nullptr;
  const Guidance* guidance = nullptr;  // may be null
  std::vector<int> parent_index;       // indices into MuSystem::nodes
};

class MuSystem {
 public:
  std::vector<MuNode> nodes;  // topological order: parents before children

  // Runs the recursion over [0, t] with n steps from the given initial
  // fields; returns the final mean field of each node.
  std::vector<Field> run(const std::vector<Field>& z0s, double t, int n) const {
    if (z0s.size() != nodes.size())
      fail(ErrorCode::dimension_mismatch, "mu system init count");
    std::vector<Field> mu = z0s;
    std::vector<Field> next = mu;
    const double dt = t / n;
    MlpWorkspace ws_f;
    std::vector<double> fin, pvals;
    for (int j = 0; j < n; ++j) {
      const double tj = j * dt;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const MuNode& nd = nodes[k];
        const double lam = nd.sde->lambda.value(tj, nd.sde->horizon);
        pvals.resize(nd.parent_index.size());
        for (std::size_t i = 0; i < mu[k].size(); ++i) {
          for (std::size_t p = 0; p < nd.parent_index.size(); ++p)
            pvals[p] = mu[static_cast<std::size_t>(nd.parent_index[p])][i];
          double drift = nd.sde->f(mu[k][i], pvals.data(), tj, ws_f, fin);
          if (nd.guidance && lam > 0.0) drift += lam * nd.guidance->pull(mu[k][i], i);
          next[k][i] = mu[k][i] + drift * dt;
          if (!std::isfinite(next[k][i]))
            fail(ErrorCode::non_finite_state, "mu recursion diverged");
        }
      }
      std::swap(mu, next);
    }
    return mu;
  }
};

/// Single-node convenience: the Euler mean recursion of Eq-style
/// mu_j = mu_{j-1} + [f + lambda (phi - mu_{j-1})] dt over [0, t].
inline Field kernel_mu(const NodeSde& sde, const Field& z0,
                       const std::vector<Field>& frozen_parents,
                       const Guidance* guidance, double t, int n_steps = 0) {
  sde.check();
  const int n = n_steps > 0 ? n_steps : sde.steps;
  const int np = sde.parent_count();
  if (static_cast<int>(frozen_parents.size()) != np)
    fail(ErrorCode::dimension_mismatch, "kernel_mu: parent count");
  if (np == 0) {
    MuSystem sys;
    sys.nodes.push_back({&sde, guidance, {}});
    return sys.run({z0}, t, n)[0];
  }
  // Frozen parents: model them as zero-dynamics nodes.
  std::vector<NodeSde> frozen(static_cast<std::size_t>(np));
  MuSystem sys;
  std::vector<Field> inits;
  for (int p = 0; p < np; ++p) {
    frozen[static_cast<std::size_t>(p)] =
        make_basic_sde(sde.node_id + "#frozen" + std::to_string(p), 1e-9, sde.horizon,
                       sde.steps);
    sys.nodes.push_back({&frozen[static_cast<std::size_t>(p)], nullptr, {}});
    inits.push_back(frozen_parents[static_cast<std::size_t>(p)]);
  }
  MuNode target{&sde, guidance, {}};
  for (int p = 0; p < np; ++p) target.parent_index.push_back(p);
  sys.nodes.push_back(target);
  inits.push_back(z0);
  return sys.run(inits, t, n).back();
}

/// Affine linearization mu(t, z) ~= m * z + c of the mean recursion around
/// z0, by central differences on the recursion (cells are independent).
struct MuLinearization {
  Field mu;  // mu(t, z0)
  Field m;   // d mu / d z0
  Field c;   // offset: mu - m * z0
};

inline MuLinearization linearize_mu(const MuSystem& sys, std::size_t target,
                                    std::vector<Field> z0s, double t, int n) {
  MuLinearization out;
  out.mu = sys.run(z0s, t, n)[target];
  const Field base = z0s[target];
  Field delta(base.size());
  for (std::size_t i = 0; i < base.size(); ++i)
    delta[i] = 1e-4 * (1.0 + std::abs(base[i]));
  for (std::size_t i = 0; i < base.size(); ++i) z0s[target][i] = base[i] + delta[i];
  Field hi = sys.run(z0s, t, n)[target];
  for (std::size_t i = 0; i < base.size(); ++i) z0s[target][i] = base[i] - delta[i];
  Field lo = sys.run(z0s, t, n)[target];
  out.m.resize(base.size());
  out.c.resize(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    out.m[i] = (hi[i] - lo[i]) / (2.0 * delta[i]);
    out.c[i] = out.mu[i] - out.m[i] * base[i];
  }
  return out;
}

/// Composite Simpson quadrature of the per-cell variance integral
/// int_0^t g(r)^2 dr. Exact for polynomial g^2 up to cubic.
inline double kernel_sigma(const NodeSde& sde, double t) {
  sde.check();  // enforces even N
  const int n = sde.steps;
  const double dt = t / n;
  MlpWorkspace ws;
  auto g2 = [&](double r) {
    const double g = sde.g(r, ws);
    return g * g;
  };
  double s = g2(0.0) + g2(t);
  for (int j = 1; j <= n / 2; ++j) s += 4.0 * g2((2 * j - 1) * dt);
  for (int j = 1; j <= n / 2 - 1; ++j) s += 2.0 * g2(2 * j * dt);
  return s * dt / 3.0;
}

/// Gaussian approximation of the forward transition density.
struct PerturbationKernel {
  Field mu;
  Field var;  // per-cell diagonal of Sigma(t)

  void check() const {
    if (mu.size() != var.size())
      fail(ErrorCode::dimension_mismatch, "perturbation kernel shape");
    for (double v : var)
      if (!(v >= 0.0)) fail(ErrorCode::negative_variance, "kernel variance < 0");
  }
};

/// Reparameterized draw z_t = mu + Sigma^{1/2} eps; returns both the state
/// and the noise so DSM can use the pair.
inline std::pair<Field, Field> sample_perturbed(const PerturbationKernel& kernel,
                                                std::uint64_t seed,
                                                std::uint64_t stream = 0) {
  kernel.check();
  Rng rng(seed, 0x7e, stream);
  Field z(kernel.mu.size()), eps(kernel.mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    eps[i] = rng.normal();
    z[i] = kernel.mu[i] + std::sqrt(kernel.var[i]) * eps[i];
  }
  return {std::move(z), std::move(eps)};
}

}  // namespace cascade
