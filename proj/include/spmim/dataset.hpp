#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spmim/image_io.hpp"

namespace spmim {

struct ManifestEntry {
  std::filesystem::path path;
  std::optional<int> label;
};

// Line format: `path<TAB>label` with the label optional. Relative paths are
// resolved against the manifest's directory; blank lines and lines starting
// with '#' are skipped.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, std::span<const ManifestEntry> entries);

// Loads every entry, resizing to `size` x `size` when size > 0.
std::vector<ImageRecord> load_dataset(const std::filesystem::path& manifest, int size);

// Assignment of each record to a group. Holdout: group 0 = train,
// group 1 = validation. K-fold: group = fold index.
struct SplitAssignment {
  int groups = 0;
  std::vector<int> group;

  std::vector<int> members(int g) const;
  std::vector<int> complement(int g) const;
};

// Shuffle, then the first round(ratio * n) records train.
SplitAssignment holdout_split(int count, double train_ratio, std::uint64_t seed);

// Per class: shuffle members, then deal them round-robin over the folds with
// a dealing position that continues across classes. Per-class fold counts
// and fold sizes both differ by at most one.
SplitAssignment stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed);

std::vector<int> labels_of(std::span<const ImageRecord> records);

}  // namespace spmim
