#include "spmim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spmim/errors.hpp"

namespace spmim {
namespace {

void require_labels(std::span<const int> values, int k, const char* what) {
  for (int v : values) {
    if (v < 0 || v >= k) {
      throw ArgumentError(std::string(what) + " value " + std::to_string(v) + " outside [0, " + std::to_string(k) + ")");
    }
  }
}

void require_pair(std::span<const int> labels, std::span<const int> preds, int k) {
  if (labels.empty()) throw ArgumentError("metrics need at least one sample");
  if (labels.size() != preds.size()) throw ArgumentError("labels and predictions differ in length");
  if (k < 2) throw ArgumentError("metrics need at least two classes");
  require_labels(labels, k, "label");
  require_labels(preds, k, "prediction");
}

}  // namespace

PredictionSet PredictionSet::from_probabilities(Tensor probabilities, std::vector<int> labels) {
  if (probabilities.rank() != 2) throw DimensionError("probabilities must be [N, K]");
  const int n = probabilities.dim(0), k = probabilities.dim(1);
  if (static_cast<int>(labels.size()) != n) throw ArgumentError("one label per probability row required");
  if (k < 2) throw ArgumentError("need at least two classes");
  require_labels(labels, k, "label");
  PredictionSet p;
  p.predicted.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    int best = 0;
    for (int c = 0; c < k; ++c) {
      const double v = probabilities[static_cast<std::size_t>(i) * k + c];
      if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("probability outside [0, 1] in row " + std::to_string(i));
      sum += v;
      if (v > probabilities[static_cast<std::size_t>(i) * k + best]) best = c;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ArgumentError("probability row " + std::to_string(i) + " does not sum to 1");
    p.predicted[static_cast<std::size_t>(i)] = best;
  }
  p.probabilities = std::move(probabilities);
  p.labels = std::move(labels);
  return p;
}

ClassificationMetrics compute_metrics(std::span<const int> labels, std::span<const int> preds, int k) {
  require_pair(labels, preds, k);
  std::vector<long> tp(static_cast<std::size_t>(k)), fp(tp), fn(tp), support(tp);
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]), p = static_cast<std::size_t>(preds[i]);
    ++support[y];
    if (y == p) {
      ++correct;
      ++tp[y];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  const double n = static_cast<double>(labels.size());
  double wf1 = 0.0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    if (support[c] == 0) continue;
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    const double f1 = denom > 0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    wf1 += f1 * static_cast<double>(support[c]) / n;
  }
  return {static_cast<double>(correct) / n, wf1};
}

ClassificationMetrics compute_metrics(const PredictionSet& p) {
  return compute_metrics(p.labels, p.predicted, p.num_classes());
}

double quadratic_kappa(std::span<const int> labels, std::span<const int> preds, int k) {
  require_pair(labels, preds, k);
  const auto kk = static_cast<std::size_t>(k);
  std::vector<double> observed(kk * kk, 0.0), row(kk, 0.0), col(kk, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    observed[static_cast<std::size_t>(labels[i]) * kk + static_cast<std::size_t>(preds[i])] += 1.0;
    row[static_cast<std::size_t>(labels[i])] += 1.0;
    col[static_cast<std::size_t>(preds[i])] += 1.0;
  }
  const double n = static_cast<double>(labels.size());
  const double scale = static_cast<double>((k - 1) * (k - 1));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < kk; ++i) {
    for (std::size_t j = 0; j < kk; ++j) {
      const double d = static_cast<double>(i) - static_cast<double>(j);
      const double w = d * d / scale;
      num += w * observed[i * kk + j];
      den += w * row[i] * col[j] / n;
    }
  }
  if (den == 0.0) throw NumericalError("quadratic kappa undefined: expected weighted disagreement is zero");
  return 1.0 - num / den;
}

double auc_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ArgumentError("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0, neg = 0, rank_sum = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ArgumentError("binary AUC labels must be 0 or 1");
    (y == 1 ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) throw ArgumentError("AUC needs both positive and negative labels");
  // Mid-ranks for tied groups give each tie half credit.
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) rank_sum += mid;
    i = j;
  }
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double auc_ovr_macro(const Tensor& probabilities, std::span<const int> labels) {
  if (probabilities.rank() != 2 || probabilities.dim(0) != static_cast<int>(labels.size())) {
    throw DimensionError("probabilities must be [N, K] with one label per row");
  }
  const int n = probabilities.dim(0), k = probabilities.dim(1);
  require_labels(labels, k, "label");
  double total = 0.0;
  int used = 0;
  for (int c = 0; c < k; ++c) {
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<int> bin(static_cast<std::size_t>(n));
    int positives = 0;
    for (int i = 0; i < n; ++i) {
      scores[static_cast<std::size_t>(i)] = probabilities[static_cast<std::size_t>(i) * k + c];
      bin[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)] == c ? 1 : 0;
      positives += bin[static_cast<std::size_t>(i)];
    }
    if (positives == 0 || positives == n) continue;
    total += auc_binary(scores, bin);
    ++used;
  }
  if (used == 0) throw ArgumentError("AUC needs at least two classes present in the labels");
  return total / used;
}

nlohmann::json MetricSummary::to_json() const {
  return {{"accuracy", accuracy}, {"weighted_f1", weighted_f1}, {"auc", auc}, {"kappa", kappa}};
}

MetricSummary summarize(const PredictionSet& p) {
  const ClassificationMetrics m = compute_metrics(p);
  MetricSummary s;
  s.accuracy = m.accuracy;
  s.weighted_f1 = m.weighted_f1;
  if (p.num_classes() == 2) {
    std::vector<double> scores(static_cast<std::size_t>(p.size()));
    for (int i = 0; i < p.size(); ++i) scores[static_cast<std::size_t>(i)] = p.probabilities[static_cast<std::size_t>(i) * 2 + 1];
    s.auc = auc_binary(scores, p.labels);
  } else {
    s.auc = auc_ovr_macro(p.probabilities, p.labels);
  }
  s.kappa = quadratic_kappa(p.labels, p.predicted, p.num_classes());
  return s;
}

}  // namespace spmim
