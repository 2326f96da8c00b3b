#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/mlp.hpp"
#include "cascade/sde.hpp"

namespace cascade {

// Loss weighting over diffusion time.
inline double dsm_gamma(double t) { return 1.0 / (1.0 + t); }

/// One perturbed sample for denoising score matching.
struct DsmItem {
  double t = 0.0;
  double z0 = 0.0;
  double zt = 0.0;
  double eps = 0.0;
  double var = 0.0;  // Sigma(t) at this cell
};

// gamma(t) * psi(sigma(t)) * || s(z_t, t) + Sigma^{-1/2} eps ||^2 with
// psi(sigma) = sigma^2 applied per cell, averaged over the batch. The net
// parameterizes sqrt(Sigma(t)) * s (a unit-scale noise prediction), so
// s = net(z, t/T) / sqrt(Sigma(t)) and the weighted residual reduces to
// gamma * (net + eps)^2.
inline double dsm_loss(const Mlp& score_net, const std::vector<DsmItem>& batch,
                       double horizon) {
  if (batch.empty()) return 0.0;
  MlpWorkspace ws;
  double in[2];
  double total = 0.0;
  for (const auto& it : batch) {
    if (it.var <= 1e-300)
      fail(ErrorCode::zero_variance, "dsm item variance below floor");
    in[0] = it.zt;
    in[1] = it.t / horizon;
    mlp_forward(score_net, in, ws);
    const double s = ws.act.back()[0] / std::sqrt(it.var);
    const double r = s + it.eps / std::sqrt(it.var);
    total += dsm_gamma(it.t) * it.var * r * r;
  }
  return total / static_cast<double>(batch.size());
}

// Same objective, accumulating parameter gradients of the batch mean.
inline double dsm_loss_grad(const Mlp& score_net, const std::vector<DsmItem>& batch,
                            double horizon, MlpGrads& grads, MlpWorkspace& ws) {
  if (batch.empty()) return 0.0;
  double in[2], upstream[1];
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& it : batch) {
    if (it.var <= 1e-300)
      fail(ErrorCode::zero_variance, "dsm item variance below floor");
    in[0] = it.zt;
    in[1] = it.t / horizon;
    mlp_forward(score_net, in, ws);
    // gamma * var * (net/sqrt(var) + eps/sqrt(var))^2 = gamma * (net + eps)^2
    const double w = dsm_gamma(it.t);
    const double r = ws.act.back()[0] + it.eps;
    total += w * r * r;
    upstream[0] = 2.0 * w * r * inv_n;
    mlp_backward_accum(score_net, upstream, ws, grads);
  }
  return total * inv_n;
}

struct ScoreTrainConfig {
  int epochs = 200;
  int batch_size = 128;
  int time_groups = 8;       // distinct diffusion times drawn per step
  int steps_per_epoch = 0;   // 0: ceil(dataset / batch)
  double lr = 5e-3;
  double lr_decay = 2e-4;    // lr_k = lr / (1 + decay * k)
  double t_min_frac = 1e-3;  // floor on sampled diffusion times
  int hidden = 32;
  // Root-mean-square preconditioning: A = diag(1 / (sqrt(v) + 1e-8)) with v
  // an exponential average of squared gradients. Identity when disabled.
  bool adaptive_precond = true;
  double precond_decay = 0.999;
  // Polyak averaging of the second half of the run; damps the SGD noise
  // floor without touching the objective.
  bool average_params = true;
  std::uint64_t seed = 1;
};

struct ScoreTrainResult {
  std::vector<double> epoch_loss;
};

inline Mlp make_score_net(int hidden, std::uint64_t seed) {
  Mlp net({2, hidden, hidden, 1});
  Rng rng(seed, 0x5c);
  net.init_xavier(rng);
  return net;
}

namespace detail {
// The mean recursion is the identity when every drift net in the system is
// identically zero and no node has guidance; skipping it is then exact.
inline bool mu_is_identity(const MuSystem& sys) {
  for (const auto& nd : sys.nodes) {
    if (nd.guidance && !nd.guidance->empty() && nd.sde->lambda.lambda0 > 0.0)
      return false;
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

/// Trains a score net by denoising score matching against the Gaussian
/// perturbation kernel of the node's forward SDE. `inits` are the initial
/// fields of every node in `system` (the target node last); its cells pooled
/// over locations form the z0 dataset. Returns the per-epoch loss curve.
inline ScoreTrainResult train_score(Mlp& score_net, const NodeSde& sde,
                                    const MuSystem& system,
                                    const std::vector<Field>& inits,
                                    std::size_t target_index,
                                    const ScoreTrainConfig& cfg) {
  sde.check();
  if (inits.size() != system.nodes.size())
    fail(ErrorCode::dimension_mismatch, "train_score: init count");
  const Field& z0 = inits[target_index];
  const std::size_t dim = z0.size();
  if (dim < static_cast<std::size_t>(cfg.batch_size) && dim == 0)
    fail(ErrorCode::config_invalid, "train_score: empty dataset");

  const bool identity_mu = detail::mu_is_identity(system);
  const double t_min = cfg.t_min_frac * sde.horizon;
  const int steps =
      cfg.steps_per_epoch > 0
          ? cfg.steps_per_epoch
          : std::max<int>(1, static_cast<int>((dim + cfg.batch_size - 1) / cfg.batch_size));
  const int per_group = std::max(1, cfg.batch_size / std::max(1, cfg.time_groups));

  Rng rng(cfg.seed, stream_id(sde.node_id), 0xd5);
  MlpWorkspace ws;
  MlpGrads grads(score_net);
  Optimizer opt;
  std::vector<double> grad_sq;  // running second moment for the preconditioner
  if (cfg.adaptive_precond) {
    grad_sq.assign(score_net.param_count(), 0.0);
    opt.precond.assign(score_net.param_count(), 1.0);
  }
  ScoreTrainResult result;
  result.epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));

  std::vector<DsmItem> batch;
  long step_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < steps; ++step) {
      batch.clear();
      for (int g = 0; g < cfg.time_groups; ++g) {
        const double t = rng.uniform_open_lo(t_min, sde.horizon);
        const double var = kernel_sigma(sde, t);
        const Field* mu_field = &z0;
        Field mu_storage;
        if (!identity_mu) {
          mu_storage = system.run(inits, t, sde.steps)[target_index];
          mu_field = &mu_storage;
        }
        for (int k = 0; k < per_group; ++k) {
          const std::size_t cell = static_cast<std::size_t>(rng.below(dim));
          DsmItem it;
          it.t = t;
          it.z0 = z0[cell];
          it.var = var;
          it.eps = rng.normal();
          it.zt = (*mu_field)[cell] + std::sqrt(var) * it.eps;
          batch.push_back(it);
        }
      }
      grads.zero();
      const double loss = dsm_loss_grad(score_net, batch, sde.horizon, grads, ws);
      if (!std::isfinite(loss)) fail(ErrorCode::diverged, "dsm loss non-finite");
      epoch_loss += loss;
      opt.learning_rate = cfg.lr / (1.0 + cfg.lr_decay * static_cast<double>(step_counter));
      if (cfg.adaptive_precond) {
        const double decay = step_counter == 0 ? 0.0 : cfg.precond_decay;
        std::size_t k = 0;
        for (std::size_t l = 0; l < grads.w.size(); ++l) {
          for (double gv : grads.w[l]) {
            grad_sq[k] = decay * grad_sq[k] + (1.0 - decay) * gv * gv;
            opt.precond[k] = 1.0 / (std::sqrt(grad_sq[k]) + 1e-8);
            ++k;
          }
          for (double gv : grads.b[l]) {
            grad_sq[k] = decay * grad_sq[k] + (1.0 - decay) * gv * gv;
            opt.precond[k] = 1.0 / (std::sqrt(grad_sq[k]) + 1e-8);
            ++k;
          }
        }
      }
      sgd_step(score_net, grads, opt);
      ++step_counter;
      if (cfg.average_params && epoch >= cfg.epochs / 2) {
        if (averaged_count == 0) avg = score_net;
        else {
          const double w = 1.0 / static_cast<double>(averaged_count + 1);
          for (std::size_t l = 0; l < avg.w.size(); ++l) {
            for (std::size_t i = 0; i < avg.w[l].size(); ++i)
              avg.w[l][i] += w * (score_net.w[l][i] - avg.w[l][i]);
            for (std::size_t i = 0; i < avg.b[l].size(); ++i)
              avg.b[l][i] += w * (score_net.b[l][i] - avg.b[l][i]);
          }
        }
        ++averaged_count;
      }
    }
    result.epoch_loss.push_back(epoch_loss / steps);
  }
  if (cfg.average_params && averaged_count > 0) score_net = avg;
  return result;
}

}  // namespace cascade
