#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spmim/autodiff.hpp"
#include "spmim/spatial_mask.hpp"

namespace spmim {

// Patch-visibility grid at the encoder's coarsest resolution: one cell per
// D x D pixel patch. true = visible.
struct MaskGrid {
  int rows = 0;
  int cols = 0;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> visible;

  bool is_visible(int r, int c) const { return visible[static_cast<std::size_t>(r) * cols + c] != 0; }
  std::size_t masked_count() const;
};

// Number of masked cells for a ratio: round-half-up of ratio * cells.
std::size_t masked_cell_count(int rows, int cols, double ratio);

// Masks exactly masked_cell_count(rows, cols, ratio) cells chosen uniformly
// without replacement. Pure function of its arguments.
MaskGrid sample_mask(int rows, int cols, double ratio, std::uint64_t seed);

// Nearest-neighbour expansion of the grid to an h x w map (single sample).
SpatialMask expand_mask(const MaskGrid& base, int h, int w);

// Per-scale masks for an H x W image. Level i (1-based) has extent
// (H / 2^i, W / 2^i); the number of levels is log2(H / base.rows), five for
// the default 32x downsampling.
class MaskPyramid {
 public:
  MaskPyramid(MaskGrid base, int image_h, int image_w);

  int num_levels() const { return static_cast<int>(levels_.size()); }
  int downsample_ratio() const { return 1 << num_levels(); }
  const MaskGrid& base() const { return base_; }
  int image_height() const { return image_h_; }
  int image_width() const { return image_w_; }

  // level(0) is the full-resolution pixel mask; level(i), 1 <= i <= L, the
  // map at scale S_i.
  const SpatialMask& level(int i) const;

 private:
  MaskGrid base_;
  int image_h_;
  int image_w_;
  SpatialMask pixels_;
  std::vector<SpatialMask> levels_;
};

MaskPyramid build_mask_pyramid(const MaskGrid& base, int image_h, int image_w);

// Per-sample pyramids stacked into batch masks, one SpatialMask per level
// (index 0 = pixels). All pyramids must share geometry.
struct BatchMasks {
  std::vector<SpatialMask> levels;

  int num_scales() const { return static_cast<int>(levels.size()) - 1; }
  const SpatialMask& level(int i) const { return levels.at(static_cast<std::size_t>(i)); }
};

BatchMasks stack_pyramids(std::span<const MaskPyramid> pyramids);

// All-visible masks for an N-sample batch with `scales` levels.
BatchMasks all_visible_masks(int batch, int image_h, int image_w, int scales);

// Masked positions set to zero in every channel; visible ones untouched.
Tensor apply_mask_zero(const Tensor& x, const SpatialMask& mask);

}  // namespace spmim
