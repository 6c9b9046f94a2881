#include "spmim/gradcam.hpp"

#include <algorithm>

#include "spmim/errors.hpp"
#include "spmim/image_io.hpp"

namespace spmim {

Tensor gradcam_from_activations(const Tensor& a, const Tensor& grad, int height, int width) {
  if (a.rank() != 3 || a.shape() != grad.shape()) throw DimensionError("gradcam: activations/gradients must be [C,h,w]");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (height % h != 0 || width % w != 0) throw GeometryError("gradcam: output size is not a multiple of the map");
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  std::vector<double> cam(plane, 0.0);
  for (int k = 0; k < c; ++k) {
    double alpha = 0.0;
    for (std::size_t i = 0; i < plane; ++i) alpha += grad[k * plane + i];
    alpha /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) cam[i] += alpha * a[k * plane + i];
  }
  for (double& v : cam) v = std::max(v, 0.0);
  const auto [lo, hi] = std::minmax_element(cam.begin(), cam.end());
  const double min = *lo, range = *hi - *lo;
  for (double& v : cam) v = range > 0.0 ? (v - min) / range : 0.0;

  Tensor out({height, width}, 0.0);
  const int fy = height / h, fx = width / w;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out[static_cast<std::size_t>(y) * width + x] = cam[static_cast<std::size_t>(y / fy) * w + x / fx];
  return out;
}

Heatmap gradcam(Classifier& model, const Tensor& image, int target_class, int layer) {
  if (image.rank() != 3) throw DimensionError("gradcam: image must be [3,H,W]");
  const int scales = model.encoder().num_scales();
  if (layer == 0) layer = scales;
  if (layer < 1 || layer > scales) {
    throw ArgumentError("gradcam: layer " + std::to_string(layer) + " is not a tap (1.." + std::to_string(scales) + ")");
  }
  const int k = model.config().num_classes;
  if (target_class < 0 || target_class >= k) throw ArgumentError("gradcam: target class out of range");

  Graph g;
  ClassifierPass pass = model.forward(g, image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}), Mode::kEval);
  Tensor pick({1, k}, 0.0);
  pick[static_cast<std::size_t>(target_class)] = 1.0;
  g.backward(ops::sum(ops::mul_const(pass.logits, pick)));

  const Var& tap = pass.features.scale(layer);
  const Tensor& av = tap.value();
  const Shape chw{av.dim(1), av.dim(2), av.dim(3)};
  const Tensor grad = tap.grad().empty() ? Tensor::zeros(chw) : tap.grad().reshaped(chw);
  return {gradcam_from_activations(av.reshaped(chw), grad, image.dim(1), image.dim(2)), layer, target_class};
}

void save_heatmap_png(const std::filesystem::path& path, const Heatmap& heatmap) { save_png(path, heatmap.map); }

void save_overlay_png(const std::filesystem::path& path, const Tensor& image, const Heatmap& heatmap, double alpha) {
  const int h = heatmap.map.dim(0), w = heatmap.map.dim(1);
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != h || image.dim(2) != w) {
    throw DimensionError("overlay: image and heatmap sizes differ");
  }
  Tensor out = image;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i) {
    const double v = heatmap.map[i];
    const double ramp[3] = {std::clamp(2.0 * v - 0.5, 0.0, 1.0), std::clamp(1.0 - 2.0 * std::abs(v - 0.5), 0.0, 1.0),
                            std::clamp(1.5 - 2.0 * v, 0.0, 1.0)};
    for (std::size_t c = 0; c < 3; ++c) out[c * plane + i] = (1.0 - alpha) * image[c * plane + i] + alpha * ramp[c];
  }
  save_png(path, out);
}

}  // namespace spmim
