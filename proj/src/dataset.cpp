#include "spmim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "spmim/errors.hpp"
#include "spmim/rng.hpp"

namespace spmim {

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  const std::filesystem::path base = manifest.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    ManifestEntry e;
    const auto tab = line.find('\t');
    std::filesystem::path p = line.substr(0, tab);
    e.path = p.is_absolute() ? p : base / p;
    if (tab != std::string::npos && tab + 1 < line.size()) {
      try {
        std::size_t used = 0;
        const std::string field = line.substr(tab + 1);
        e.label = std::stoi(field, &used);
        if (used != field.size() || *e.label < 0) throw std::invalid_argument("label");
      } catch (const std::exception&) {
        throw DataError(manifest.string() + ":" + std::to_string(line_no) + ": invalid label");
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& manifest, std::span<const ManifestEntry> entries) {
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write manifest " + manifest.string());
  for (const ManifestEntry& e : entries) {
    out << e.path.string();
    if (e.label) out << '\t' << *e.label;
    out << '\n';
  }
}

std::vector<ImageRecord> load_dataset(const std::filesystem::path& manifest, int size) {
  std::vector<ImageRecord> records;
  for (const ManifestEntry& e : read_manifest(manifest)) {
    ImageRecord rec = load_image(e.path);
    rec.label = e.label;
    if (size > 0) rec.pixels = resize_bilinear(rec.pixels, size, size);
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<int> SplitAssignment::members(int g) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < group.size(); ++i)
    if (group[i] == g) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> SplitAssignment::complement(int g) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < group.size(); ++i)
    if (group[i] != g) out.push_back(static_cast<int>(i));
  return out;
}

SplitAssignment holdout_split(int count, double train_ratio, std::uint64_t seed) {
  if (count < 2) throw ArgumentError("holdout split needs at least two records");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ArgumentError("holdout ratio must lie in (0, 1)");
  std::mt19937_64 rng(derive_seed(seed, {kSplitStream, 0}));
  const std::vector<int> order = shuffled_indices(count, rng);
  const int n_train = static_cast<int>(std::floor(train_ratio * count + 0.5));
  SplitAssignment s;
  s.groups = 2;
  s.group.assign(static_cast<std::size_t>(count), 1);
  for (int i = 0; i < n_train; ++i) s.group[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 0;
  return s;
}

SplitAssignment stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed) {
  if (k < 2) throw ArgumentError("k-fold needs k >= 2 so every fold has a complement");
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
  for (const auto& [label, members] : by_class) {
    if (static_cast<int>(members.size()) < k) {
      throw DataError("stratification impossible: class " + std::to_string(label) + " has " +
                      std::to_string(members.size()) + " records for " + std::to_string(k) + " folds");
    }
  }
  std::mt19937_64 rng(derive_seed(seed, {kSplitStream, static_cast<std::uint64_t>(k)}));
  SplitAssignment s;
  s.groups = k;
  s.group.assign(labels.size(), -1);
  std::size_t dealer = 0;
  for (auto& [label, members] : by_class) {
    shuffle_in_place(members, rng);
    for (int idx : members) s.group[static_cast<std::size_t>(idx)] = static_cast<int>(dealer++ % k);
  }
  return s;
}

std::vector<int> labels_of(std::span<const ImageRecord> records) {
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const ImageRecord& r : records) {
    if (!r.label) throw DataError("record " + r.id + " has no label");
    labels.push_back(*r.label);
  }
  return labels;
}

}  // namespace spmim
