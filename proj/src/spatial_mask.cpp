#include "spmim/spatial_mask.hpp"

#include <algorithm>
#include <string>

#include "spmim/errors.hpp"

namespace spmim {

SpatialMask::SpatialMask(int count, int height, int width, bool visible)
    : count_(count), height_(height), width_(width) {
  if (count <= 0 || height <= 0 || width <= 0) throw DimensionError("empty spatial mask");
  bits_.assign(static_cast<std::size_t>(count) * height * width, visible ? 1 : 0);
}

SpatialMask::SpatialMask(int count, int height, int width, std::vector<std::uint8_t> visible)
    : count_(count), height_(height), width_(width), bits_(std::move(visible)) {
  if (count <= 0 || height <= 0 || width <= 0) throw DimensionError("empty spatial mask");
  if (bits_.size() != static_cast<std::size_t>(count) * height * width) {
    throw DimensionError("spatial mask data does not match its extents");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t SpatialMask::visible_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

void SpatialMask::require_compatible(int n, int h, int w, const char* what) const {
  if (height_ != h || width_ != w || (count_ != 1 && count_ != n)) {
    throw DimensionError(std::string(what) + ": mask " + std::to_string(count_) + "x" +
                         std::to_string(height_) + "x" + std::to_string(width_) +
                         " does not fit batch " + std::to_string(n) + "x" + std::to_string(h) + "x" +
                         std::to_string(w));
  }
}

RowRuns::RowRuns(int count, int height, int width, const SpatialMask* mask) : height_(height) {
  offsets_.reserve(static_cast<std::size_t>(count) * height + 1);
  offsets_.push_back(0);
  for (int n = 0; n < count; ++n) {
    const std::uint8_t* plane = mask ? mask->plane(n) : nullptr;
    for (int r = 0; r < height; ++r) {
      if (!plane) {
        runs_.push_back({0, width});
      } else {
        const std::uint8_t* row = plane + static_cast<std::size_t>(r) * width;
        int c = 0;
        while (c < width) {
          while (c < width && !row[c]) ++c;
          int begin = c;
          while (c < width && row[c]) ++c;
          if (c > begin) runs_.push_back({begin, c});
        }
      }
      offsets_.push_back(runs_.size());
    }
  }
}

}  // namespace spmim
