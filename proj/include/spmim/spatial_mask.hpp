#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace spmim {

// A stack of per-sample boolean visibility maps at one spatial resolution.
// Convention used across the library: 1 (true) = visible, 0 = masked.
// A mask with count == 1 broadcasts over every sample of a batch.
class SpatialMask {
 public:
  SpatialMask() = default;
  SpatialMask(int count, int height, int width, bool visible = true);
  SpatialMask(int count, int height, int width, std::vector<std::uint8_t> visible);

  int count() const { return count_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }

  bool visible(int n, int r, int c) const {
    return bits_[(static_cast<std::size_t>(n) * height_ + r) * width_ + c] != 0;
  }
  void set(int n, int r, int c, bool visible) {
    bits_[(static_cast<std::size_t>(n) * height_ + r) * width_ + c] = visible ? 1 : 0;
  }
  // Plane for sample n, honouring broadcast.
  const std::uint8_t* plane(int n) const {
    return bits_.data() + (count_ == 1 ? 0 : static_cast<std::size_t>(n) * plane_size());
  }

  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::size_t visible_count() const;
  std::size_t masked_count() const { return bits_.size() - visible_count(); }
  bool all_visible() const { return visible_count() == bits_.size(); }

  // Checks the mask can be applied to a batch of `n` samples of size h x w.
  void require_compatible(int n, int h, int w, const char* what) const;

  friend bool operator==(const SpatialMask&, const SpatialMask&) = default;

 private:
  int count_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Half-open column ranges [begin, end) of visible cells, per (sample, row).
// Without a mask every row is a single full-width run.
class RowRuns {
 public:
  struct Run {
    int begin;
    int end;
  };

  RowRuns(int count, int height, int width, const SpatialMask* mask);

  std::span<const Run> row(int n, int r) const {
    std::size_t key = static_cast<std::size_t>(n) * height_ + r;
    return {runs_.data() + offsets_[key], runs_.data() + offsets_[key + 1]};
  }

 private:
  int height_;
  std::vector<std::size_t> offsets_;
  std::vector<Run> runs_;
};

}  // namespace spmim
