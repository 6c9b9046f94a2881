#pragma once

#include <filesystem>

#include "spmim/model.hpp"

namespace spmim {

struct Heatmap {
  Tensor map;  // [H, W], values in [0, 1]
  int layer = 0;
  int target_class = 0;
};

// heatmap = ReLU(sum_k alpha_k A_k) with alpha_k the spatial mean of
// d(logit)/dA_k, min-max normalized and nearest-upsampled to height x width.
// `activations` and `gradients` are [C, h, w]; height/width must be integer
// multiples of h/w. A constant map normalizes to zero.
Tensor gradcam_from_activations(const Tensor& activations, const Tensor& gradients, int height, int width);

// Grad-CAM of `target_class` on encoder scale `layer` (1-based; 0 picks the
// coarsest scale). `image` is [3,H,W]. ArgumentError on an invalid tap or
// class.
Heatmap gradcam(Classifier& model, const Tensor& image, int target_class, int layer = 0);

// 8-bit grayscale heatmap.
void save_heatmap_png(const std::filesystem::path& path, const Heatmap& heatmap);
// Image blended with a blue-to-red colour ramp of the heatmap.
void save_overlay_png(const std::filesystem::path& path, const Tensor& image, const Heatmap& heatmap,
                      double alpha = 0.5);

}  // namespace spmim
