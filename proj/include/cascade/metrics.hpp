#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/grid.hpp"

namespace cascade {

struct MetricsReport {
  std::optional<double> auc;  // absent for single-class truth
  double tpr = 0.0;
  double tnr = 0.0;
  double f1 = 0.0;
  double ap = 0.0;
  int positives = 0;
  int negatives = 0;
};

struct EvalOptions {
  // Truth is binarized at this quantile of the truth field unless it is
  // already binary (only 0/1 values).
  double positive_quantile = 0.8;
  // Predictions are binarized at the matching quantile of the prediction
  // field unless an absolute threshold is given.
  std::optional<double> pred_threshold;
};

inline double quantile(Field v, double q) {
  if (v.empty()) fail(ErrorCode::degenerate_labels, "quantile of empty field");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - w) + v[hi] * w;
}

// Rank-statistic AUC (Mann-Whitney) with average ranks for ties.
inline std::optional<double> auc_rank(const Field& score,
                                      const std::vector<bool>& label) {
  const std::size_t n = score.size();
  std::size_t pos = 0;
  for (bool b : label) pos += b ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && score[idx[j + 1]] == score[idx[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (label[idx[k]]) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double auc = (rank_sum_pos - 0.5 * static_cast<double>(pos) *
                                        static_cast<double>(pos + 1)) /
                     (static_cast<double>(pos) * static_cast<double>(neg));
  return auc;
}

// Area under the precision-recall curve (step integration over descending
// score thresholds).
inline double average_precision(const Field& score, const std::vector<bool>& label) {
  std::size_t pos = 0;
  for (bool b : label) pos += b ? 1 : 0;
  if (pos == 0) return 0.0;
  std::vector<std::size_t> idx(score.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  double ap = 0.0;
  double tp = 0.0, fp = 0.0, prev_recall = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    double tp_add = 0.0, fp_add = 0.0;
    while (j < idx.size() && score[idx[j]] == score[idx[i]]) {
      if (label[idx[j]]) tp_add += 1.0;
      else fp_add += 1.0;
      ++j;
    }
    tp += tp_add;
    fp += fp_add;
    const double recall = tp / static_cast<double>(pos);
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

inline bool is_binary_field(const Field& v) {
  for (double x : v)
    if (x != 0.0 && x != 1.0) return false;
  return true;
}

/// AUC by rank statistic over all cells, TPR/TNR/F1 at the chosen
/// threshold, AP as area under precision-recall. Single-class truth yields
/// an absent AUC.
inline MetricsReport evaluate(const Field& pred, const Field& truth,
                              const EvalOptions& opts = {}) {
  if (pred.size() != truth.size() || pred.empty())
    fail(ErrorCode::dimension_mismatch, "evaluate: field sizes");
  std::vector<bool> label(truth.size());
  if (is_binary_field(truth)) {
    for (std::size_t i = 0; i < truth.size(); ++i) label[i] = truth[i] > 0.5;
  } else {
    const double thr = quantile(truth, opts.positive_quantile);
    for (std::size_t i = 0; i < truth.size(); ++i) label[i] = truth[i] > thr;
  }
  MetricsReport rep;
  for (bool b : label) (b ? rep.positives : rep.negatives) += 1;
  rep.auc = auc_rank(pred, label);
  rep.ap = average_precision(pred, label);
  const double pthr = opts.pred_threshold
                          ? *opts.pred_threshold
                          : quantile(pred, opts.positive_quantile);
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool phat = pred[i] > pthr;
    if (phat && label[i]) ++tp;
    else if (phat && !label[i]) ++fp;
    else if (!phat && label[i]) ++fn;
    else ++tn;
  }
  rep.tpr = rep.positives ? tp / static_cast<double>(rep.positives) : 0.0;
  rep.tnr = rep.negatives ? tn / static_cast<double>(rep.negatives) : 0.0;
  rep.f1 = (2 * tp + fp + fn) > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
  return rep;
}

/// Probability-map categorization schemes.
enum class DamageScheme { four_level, five_level };

inline const std::vector<std::string>& damage_level_names(DamageScheme scheme) {
  static const std::vector<std::string> four = {"slight", "moderate",
                                                "partial_collapse", "collapse"};
  static const std::vector<std::string> five = {"none", "slight", "moderate",
                                                "partial_collapse", "collapse"};
  return scheme == DamageScheme::four_level ? four : five;
}

/// Maps probabilities in [0,1] onto damage categories. Four levels:
/// <=0.3, (0.3,0.65], (0.65,0.8], >0.8. Five levels: <=0.15, (0.15,0.5],
/// (0.5,0.7], (0.7,0.85], >0.85.
inline std::vector<int> classify_map(const Field& prob, DamageScheme scheme) {
  static const double four_edges[] = {0.3, 0.65, 0.8};
  static const double five_edges[] = {0.15, 0.5, 0.7, 0.85};
  const double* edges = scheme == DamageScheme::four_level ? four_edges : five_edges;
  const int n_edges = scheme == DamageScheme::four_level ? 3 : 4;
  std::vector<int> out(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = prob[i];
    if (!(p >= 0.0 && p <= 1.0))
      fail(ErrorCode::out_of_range, "classify_map: probability outside [0,1]");
    int level = n_edges;  // top category
    for (int e = 0; e < n_edges; ++e) {
      if (p <= edges[e]) {
        level = e;
        break;
      }
    }
    out[i] = level;
  }
  return out;
}

}  // namespace cascade
