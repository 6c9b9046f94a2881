#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"
#include "spmim/dataset.hpp"
#include "spmim/metrics.hpp"

namespace spmim {

// Trains on `train` and returns class probabilities [|test|, K] for `test`.
using FoldTrainFn = std::function<Tensor(std::span<const ImageRecord> train, std::span<const ImageRecord> test,
                                         std::uint64_t fold_seed)>;

struct FoldResult {
  int fold = 0;
  std::vector<int> test_indices;
  PredictionSet predictions;
  MetricSummary metrics;
};

struct CrossValidationResult {
  std::vector<FoldResult> folds;
  MetricSummary mean;
  MetricSummary std;  // sample standard deviation over folds

  nlohmann::json to_json() const;
};

// Stratified k-fold split (seeded from `seed`), one model per fold trained on
// the complement; fold seeds derive from (seed, fold).
CrossValidationResult cross_validate(std::span<const ImageRecord> records, int k, int num_classes,
                                     const FoldTrainFn& train_fn, std::uint64_t seed);

std::uint64_t fold_seed(std::uint64_t seed, int fold);

// Mean and sample standard deviation of each metric.
void aggregate(std::span<const MetricSummary> rows, MetricSummary& mean, MetricSummary& std);

}  // namespace spmim
