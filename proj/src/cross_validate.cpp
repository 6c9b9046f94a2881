#include "spmim/cross_validate.hpp"
#include <array>

#include <cmath>

#include "spmim/errors.hpp"
#include "spmim/rng.hpp"

namespace spmim {

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
  return derive_seed(seed, {kSplitStream, static_cast<std::uint64_t>(fold) + 1});
}

void aggregate(std::span<const MetricSummary> rows, MetricSummary& mean, MetricSummary& std) {
  if (rows.empty()) throw ArgumentError("nothing to aggregate");
  const double n = static_cast<double>(rows.size());
  auto fields = [](MetricSummary& m) {
    return std::array<double*, 4>{&m.accuracy, &m.weighted_f1, &m.auc, &m.kappa};
  };
  mean = {};
  std = {};
  for (MetricSummary row : rows) {
    auto src = fields(row), dst = fields(mean);
    for (std::size_t f = 0; f < 4; ++f) *dst[f] += *src[f];
  }
  for (double* v : fields(mean)) *v /= n;
  if (rows.size() < 2) return;
  for (MetricSummary row : rows) {
    auto src = fields(row), mu = fields(mean), dst = fields(std);
    for (std::size_t f = 0; f < 4; ++f) *dst[f] += (*src[f] - *mu[f]) * (*src[f] - *mu[f]);
  }
  for (double* v : fields(std)) *v = std::sqrt(*v / (n - 1));
}

CrossValidationResult cross_validate(std::span<const ImageRecord> records, int k, int num_classes,
                                     const FoldTrainFn& train_fn, std::uint64_t seed) {
  const std::vector<int> labels = labels_of(records);
  const SplitAssignment split = stratified_kfold(labels, k, derive_seed(seed, {kSplitStream}));
  CrossValidationResult result;
  std::vector<MetricSummary> rows;
  for (int f = 0; f < k; ++f) {
    std::vector<ImageRecord> train, test;
    FoldResult fold;
    fold.fold = f;
    fold.test_indices = split.members(f);
    for (int i : split.complement(f)) train.push_back(records[static_cast<std::size_t>(i)]);
    std::vector<int> test_labels;
    for (int i : fold.test_indices) {
      test.push_back(records[static_cast<std::size_t>(i)]);
      test_labels.push_back(labels[static_cast<std::size_t>(i)]);
    }
    Tensor probs = train_fn(train, test, fold_seed(seed, f));
    if (probs.rank() != 2 || probs.dim(0) != static_cast<int>(test.size()) || probs.dim(1) != num_classes) {
      throw DimensionError("fold " + std::to_string(f) + ": train_fn returned " + shape_to_string(probs.shape()));
    }
    fold.predictions = PredictionSet::from_probabilities(std::move(probs), std::move(test_labels));
    fold.metrics = summarize(fold.predictions);
    rows.push_back(fold.metrics);
    result.folds.push_back(std::move(fold));
  }
  aggregate(rows, result.mean, result.std);
  return result;
}

nlohmann::json CrossValidationResult::to_json() const {
  nlohmann::json j;
  j["folds"] = nlohmann::json::array();
  for (const FoldResult& f : folds) {
    nlohmann::json row = f.metrics.to_json();
    row["fold"] = f.fold;
    row["size"] = f.test_indices.size();
    j["folds"].push_back(row);
  }
  j["mean"] = mean.to_json();
  j["std"] = std.to_json();
  return j;
}

}  // namespace spmim
