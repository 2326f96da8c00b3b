#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/grid.hpp"

namespace cascade {

constexpr double kMinBandwidth = 1e-6;  // ridge for degenerate ensembles

/// Scott's rule per dimension: h_d = std_d * M^{-1/(D+4)}. Degenerate
/// dimensions get the bandwidth floor.
inline Field scott_bandwidth(const std::vector<Field>& samples) {
  if (samples.size() < 2)
    fail(ErrorCode::degenerate_ensemble, "scott_bandwidth needs M >= 2");
  const std::size_t m = samples.size();
  const std::size_t d = samples.front().size();
  const double factor = std::pow(static_cast<double>(m),
                                 -1.0 / (static_cast<double>(d) + 4.0));
  Field h(d);
  for (std::size_t k = 0; k < d; ++k) {
    double mean = 0.0;
    for (const auto& s : samples) mean += s[k];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (const auto& s : samples) var += (s[k] - mean) * (s[k] - mean);
    var /= static_cast<double>(m - 1);
    h[k] = std::max(std::sqrt(var) * factor, kMinBandwidth);
  }
  return h;
}

/// Gaussian-kernel log-density log[(1/(M prod h)) sum_l K((z - z_l)/h)],
/// evaluated stably via log-sum-exp.
inline double kde_logdensity(const std::vector<Field>& samples, const Field& h,
                             const Field& z) {
  if (samples.empty()) fail(ErrorCode::degenerate_ensemble, "kde: empty ensemble");
  const std::size_t d = z.size();
  if (h.size() != d || samples.front().size() != d)
    fail(ErrorCode::dimension_mismatch, "kde: dimension mismatch");
  double log_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) -
                    std::log(static_cast<double>(samples.size()));
  for (double hk : h) {
    if (!(hk > 0.0)) fail(ErrorCode::degenerate_ensemble, "kde: bandwidth <= 0");
    log_norm -= std::log(hk);
  }
  double max_e = -std::numeric_limits<double>::infinity();
  std::vector<double> exps(samples.size());
  for (std::size_t l = 0; l < samples.size(); ++l) {
    double q = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double u = (z[k] - samples[l][k]) / h[k];
      q += u * u;
    }
    exps[l] = -0.5 * q;
    if (exps[l] > max_e) max_e = exps[l];
  }
  double s = 0.0;
  for (double e : exps) s += std::exp(e - max_e);
  return log_norm + max_e + std::log(s);
}

/// Fast univariate form used for per-cell entropy terms: samples are the M
/// values of one cell.
inline double kde_logdensity_1d(const double* values, std::size_t m, double h,
                                double z) {
  if (m == 0) fail(ErrorCode::degenerate_ensemble, "kde: empty ensemble");
  if (!(h > 0.0)) fail(ErrorCode::degenerate_ensemble, "kde: bandwidth <= 0");
  double max_e = -std::numeric_limits<double>::infinity();
  double s = 0.0;
  // two-pass log-sum-exp
  for (std::size_t l = 0; l < m; ++l) {
    const double u = (z - values[l]) / h;
    const double e = -0.5 * u * u;
    if (e > max_e) max_e = e;
  }
  for (std::size_t l = 0; l < m; ++l) {
    const double u = (z - values[l]) / h;
    s += std::exp(-0.5 * u * u - max_e);
  }
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(h) -
         std::log(static_cast<double>(m)) + max_e + std::log(s);
}

}  // namespace cascade
