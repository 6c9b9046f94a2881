#pragma once

#include <span>
#include <vector>

#include "json.hpp"
#include "spmim/tensor.hpp"

namespace spmim {

// Per-sample class probabilities [N, K], their argmax and the true labels.
struct PredictionSet {
  Tensor probabilities;
  std::vector<int> predicted;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  int num_classes() const { return probabilities.dim(1); }

  // Validates rows (entries in [0,1], sum 1 within 1e-9) and labels; argmax
  // ties go to the lowest class index.
  static PredictionSet from_probabilities(Tensor probabilities, std::vector<int> labels);
};

struct ClassificationMetrics {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
};

// Weighted F1 averages per-class F1 by label support; a class that is never
// predicted has F1 0. ArgumentError on empty or mismatched input.
ClassificationMetrics compute_metrics(std::span<const int> labels, std::span<const int> preds, int num_classes);
ClassificationMetrics compute_metrics(const PredictionSet& preds);

// Quadratic-weighted Cohen's kappa. ArgumentError for K < 2 or labels
// outside [0, K); NumericalError when the chance-weighted disagreement is 0.
double quadratic_kappa(std::span<const int> labels, std::span<const int> preds, int num_classes);

// Mann-Whitney AUC: P(pos > neg) + 0.5 P(tie). `labels` are 0/1;
// ArgumentError unless both classes are present.
double auc_binary(std::span<const double> scores, std::span<const int> labels);

// One-vs-rest macro AUC over the classes present in `labels` (at least two).
double auc_ovr_macro(const Tensor& probabilities, std::span<const int> labels);

struct MetricSummary {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  double auc = 0.0;
  double kappa = 0.0;

  nlohmann::json to_json() const;
};

// All four metrics; binary problems use the positive-class column for AUC.
MetricSummary summarize(const PredictionSet& preds);

}  // namespace spmim
