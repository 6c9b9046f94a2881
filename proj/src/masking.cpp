#include "spmim/masking.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spmim/errors.hpp"
#include "spmim/rng.hpp"

namespace spmim {

std::size_t MaskGrid::masked_count() const {
  return static_cast<std::size_t>(std::count(visible.begin(), visible.end(), std::uint8_t{0}));
}

std::size_t masked_cell_count(int rows, int cols, double ratio) {
  if (rows < 1 || cols < 1) throw ArgumentError("mask grid must be at least 1x1");
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ArgumentError("mask ratio must lie in [0, 1]");
  const double cells = static_cast<double>(rows) * cols;
  return static_cast<std::size_t>(std::floor(ratio * cells + 0.5));
}

MaskGrid sample_mask(int rows, int cols, double ratio, std::uint64_t seed) {
  const std::size_t masked = masked_cell_count(rows, cols, ratio);
  MaskGrid grid;
  grid.rows = rows;
  grid.cols = cols;
  grid.ratio = ratio;
  grid.seed = seed;
  grid.visible.assign(static_cast<std::size_t>(rows) * cols, 1);
  std::mt19937_64 rng(seed);
  std::vector<int> order = shuffled_indices(rows * cols, rng);
  for (std::size_t i = 0; i < masked; ++i) grid.visible[static_cast<std::size_t>(order[i])] = 0;
  return grid;
}

SpatialMask expand_mask(const MaskGrid& base, int h, int w) {
  if (h < base.rows || w < base.cols || h % base.rows != 0 || w % base.cols != 0) {
    throw GeometryError("mask grid " + std::to_string(base.rows) + "x" + std::to_string(base.cols) +
                        " cannot expand to " + std::to_string(h) + "x" + std::to_string(w));
  }
  SpatialMask out(1, h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int br = static_cast<int>(static_cast<long long>(r) * base.rows / h);
      const int bc = static_cast<int>(static_cast<long long>(c) * base.cols / w);
      out.set(0, r, c, base.is_visible(br, bc));
    }
  return out;
}

MaskPyramid::MaskPyramid(MaskGrid base, int image_h, int image_w)
    : base_(std::move(base)), image_h_(image_h), image_w_(image_w) {
  if (base_.rows < 1 || base_.cols < 1 || image_h % base_.rows != 0 || image_w % base_.cols != 0) {
    throw GeometryError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                        " is not a multiple of the mask grid");
  }
  const int ratio = image_h / base_.rows;
  if (image_w / base_.cols != ratio || ratio < 2 || (ratio & (ratio - 1)) != 0) {
    throw GeometryError("downsampling ratio must be the same power of two on both axes");
  }
  int scales = 0;
  while ((1 << scales) < ratio) ++scales;
  pixels_ = expand_mask(base_, image_h, image_w);
  for (int i = 1; i <= scales; ++i) levels_.push_back(expand_mask(base_, image_h >> i, image_w >> i));
}

const SpatialMask& MaskPyramid::level(int i) const {
  if (i == 0) return pixels_;
  if (i < 0 || i > num_levels()) throw ArgumentError("mask pyramid has no level " + std::to_string(i));
  return levels_[static_cast<std::size_t>(i - 1)];
}

MaskPyramid build_mask_pyramid(const MaskGrid& base, int image_h, int image_w) {
  return MaskPyramid(base, image_h, image_w);
}

BatchMasks stack_pyramids(std::span<const MaskPyramid> pyramids) {
  if (pyramids.empty()) throw ArgumentError("stack_pyramids: empty batch");
  const MaskPyramid& first = pyramids.front();
  BatchMasks out;
  for (int level = 0; level <= first.num_levels(); ++level) {
    const SpatialMask& ref = first.level(level);
    std::vector<std::uint8_t> bits;
    bits.reserve(ref.bits().size() * pyramids.size());
    for (const MaskPyramid& p : pyramids) {
      if (p.num_levels() != first.num_levels() || p.image_height() != first.image_height() ||
          p.image_width() != first.image_width()) {
        throw GeometryError("stack_pyramids: pyramids with different geometry");
      }
      const auto& b = p.level(level).bits();
      bits.insert(bits.end(), b.begin(), b.end());
    }
    out.levels.emplace_back(static_cast<int>(pyramids.size()), ref.height(), ref.width(), std::move(bits));
  }
  return out;
}

BatchMasks all_visible_masks(int batch, int image_h, int image_w, int scales) {
  BatchMasks out;
  for (int i = 0; i <= scales; ++i) {
    if ((image_h >> i) << i != image_h || (image_w >> i) << i != image_w) {
      throw GeometryError("image extent not divisible by 2^" + std::to_string(scales));
    }
    out.levels.emplace_back(batch, image_h >> i, image_w >> i, true);
  }
  return out;
}

Tensor apply_mask_zero(const Tensor& x, const SpatialMask& mask) {
  if (x.rank() != 4) throw DimensionError("apply_mask_zero expects [N,C,H,W]");
  mask.require_compatible(x.dim(0), x.dim(2), x.dim(3), "apply_mask_zero");
  Tensor out = x;
  const std::size_t plane = mask.plane_size();
  for (int n = 0; n < x.dim(0); ++n) {
    const std::uint8_t* vis = mask.plane(n);
    for (int c = 0; c < x.dim(1); ++c) {
      double* p = out.data().data() + (static_cast<std::size_t>(n) * x.dim(1) + c) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        if (!vis[i]) p[i] = 0.0;
    }
  }
  return out;
}

}  // namespace spmim
