#pragma once

#include <cstdint>

#include "json.hpp"
#include "spmim/image_io.hpp"

namespace spmim {

struct FactorRange {
  double lo = 1.0;
  double hi = 1.0;

  friend bool operator==(const FactorRange&, const FactorRange&) = default;
};

// Random photometric/geometric augmentation. Transforms run in the order
// crop, horizontal flip, vertical flip, contrast, brightness, sharpen, and the
// result is clamped to [0, 1].
struct AugmentPolicy {
  FactorRange crop_scale{0.8, 1.0};  // side-length fraction of the crop window
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  FactorRange contrast{0.8, 1.25};
  FactorRange brightness{0.8, 1.25};
  FactorRange sharpen{0.0, 0.5};  // unsharp-mask amount
  // Output resolution after cropping; 0 keeps the input size.
  int out_height = 0;
  int out_width = 0;

  static AugmentPolicy identity();
  void validate() const;

  nlohmann::json to_json() const;

  friend bool operator==(const AugmentPolicy&, const AugmentPolicy&) = default;
};

// Parameters drawn for one call; exposed for tests and diagnostics.
struct AugmentDraw {
  double crop_scale = 1.0;
  int crop_top = 0;
  int crop_left = 0;
  bool hflip = false;
  bool vflip = false;
  double contrast = 1.0;
  double brightness = 1.0;
  double sharpen = 0.0;
};

AugmentDraw draw_augmentation(const AugmentPolicy& policy, int height, int width, std::uint64_t seed);
Tensor apply_augmentation(const Tensor& pixels, const AugmentDraw& draw, int out_height, int out_width);

ImageRecord augment(const ImageRecord& record, const AugmentPolicy& policy, std::uint64_t seed);

}  // namespace spmim
