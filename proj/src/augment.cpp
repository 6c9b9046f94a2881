#include "spmim/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "spmim/errors.hpp"
#include "spmim/rng.hpp"

namespace spmim {
namespace {

double draw(std::mt19937_64& rng, const FactorRange& r) { return r.lo + (r.hi - r.lo) * uniform_unit(rng); }

void validate_range(const FactorRange& r, const char* what, bool allow_zero) {
  const bool lo_ok = allow_zero ? r.lo >= 0.0 : r.lo > 0.0;
  if (!lo_ok || !(r.hi >= r.lo) || !std::isfinite(r.hi)) {
    throw ArgumentError(std::string("augment: invalid ") + what + " range");
  }
}

Tensor flip(const Tensor& x, bool horizontal) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out(x.shape());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int col = 0; col < w; ++col) {
        const int sy = horizontal ? y : h - 1 - y;
        const int sx = horizontal ? w - 1 - col : col;
        out[(static_cast<std::size_t>(ch) * h + y) * w + col] = x[(static_cast<std::size_t>(ch) * h + sy) * w + sx];
      }
  return out;
}

// 3x3 box blur with replicated borders.
Tensor box_blur(const Tensor& x) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out(x.shape());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int col = 0; col < w; ++col) {
        double s = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = std::clamp(y + dy, 0, h - 1), xx = std::clamp(col + dx, 0, w - 1);
            s += x[(static_cast<std::size_t>(ch) * h + yy) * w + xx];
          }
        out[(static_cast<std::size_t>(ch) * h + y) * w + col] = s / 9.0;
      }
  return out;
}

}  // namespace

AugmentPolicy AugmentPolicy::identity() {
  AugmentPolicy p;
  p.crop_scale = {1.0, 1.0};
  p.hflip_p = 0.0;
  p.vflip_p = 0.0;
  p.contrast = {1.0, 1.0};
  p.brightness = {1.0, 1.0};
  p.sharpen = {0.0, 0.0};
  return p;
}

void AugmentPolicy::validate() const {
  validate_range(crop_scale, "crop", false);
  if (crop_scale.hi > 1.0) throw ArgumentError("augment: crop window larger than the image");
  validate_range(contrast, "contrast", false);
  validate_range(brightness, "brightness", false);
  validate_range(sharpen, "sharpen", true);
  if (!(hflip_p >= 0.0 && hflip_p <= 1.0) || !(vflip_p >= 0.0 && vflip_p <= 1.0)) {
    throw ArgumentError("augment: flip probabilities must lie in [0, 1]");
  }
  if (out_height < 0 || out_width < 0) throw ArgumentError("augment: negative output size");
}

nlohmann::json AugmentPolicy::to_json() const {
  return {{"crop_scale", {crop_scale.lo, crop_scale.hi}},
          {"hflip_p", hflip_p},
          {"vflip_p", vflip_p},
          {"contrast", {contrast.lo, contrast.hi}},
          {"brightness", {brightness.lo, brightness.hi}},
          {"sharpen", {sharpen.lo, sharpen.hi}}};
}

AugmentDraw draw_augmentation(const AugmentPolicy& policy, int height, int width, std::uint64_t seed) {
  policy.validate();
  std::mt19937_64 rng(seed);
  AugmentDraw d;
  d.crop_scale = draw(rng, policy.crop_scale);
  const int ch = std::max(1, static_cast<int>(std::lround(d.crop_scale * height)));
  const int cw = std::max(1, static_cast<int>(std::lround(d.crop_scale * width)));
  d.crop_top = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(height - ch + 1)));
  d.crop_left = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(width - cw + 1)));
  d.hflip = uniform_unit(rng) < policy.hflip_p;
  d.vflip = uniform_unit(rng) < policy.vflip_p;
  d.contrast = draw(rng, policy.contrast);
  d.brightness = draw(rng, policy.brightness);
  d.sharpen = draw(rng, policy.sharpen);
  return d;
}

Tensor apply_augmentation(const Tensor& pixels, const AugmentDraw& d, int out_height, int out_width) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3) throw DimensionError("augment expects [3,H,W]");
  const int c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
  if (out_height == 0) out_height = h;
  if (out_width == 0) out_width = w;
  if (!(d.crop_scale > 0.0 && d.crop_scale <= 1.0)) throw ArgumentError("augment: crop larger than image");

  const int ch = std::max(1, static_cast<int>(std::lround(d.crop_scale * h)));
  const int cw = std::max(1, static_cast<int>(std::lround(d.crop_scale * w)));
  Tensor x = pixels;
  if (ch != h || cw != w) {
    Tensor crop({c, ch, cw});
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < ch; ++y)
        for (int col = 0; col < cw; ++col)
          crop[(static_cast<std::size_t>(k) * ch + y) * cw + col] =
              pixels[(static_cast<std::size_t>(k) * h + y + d.crop_top) * w + col + d.crop_left];
    x = std::move(crop);
  }
  x = resize_bilinear(x, out_height, out_width);
  if (d.hflip) x = flip(x, true);
  if (d.vflip) x = flip(x, false);

  if (d.contrast != 1.0) {
    const double m = luminance(x).sum() / static_cast<double>(x.numel() / 3);
    for (double& v : x.data()) v = v * d.contrast + m * (1.0 - d.contrast);
  }
  if (d.brightness != 1.0) {
    for (double& v : x.data()) v *= d.brightness;
  }
  if (d.sharpen != 0.0) {
    Tensor blurred = box_blur(x);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = x[i] + d.sharpen * (x[i] - blurred[i]);
  }
  for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
  return x;
}

ImageRecord augment(const ImageRecord& record, const AugmentPolicy& policy, std::uint64_t seed) {
  const AugmentDraw d = draw_augmentation(policy, record.height(), record.width(), seed);
  ImageRecord out = record;
  out.pixels = apply_augmentation(record.pixels, d, policy.out_height, policy.out_width);
  return out;
}

}  // namespace spmim
