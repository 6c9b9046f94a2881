#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "spmim/tensor.hpp"

namespace spmim {

struct ImageRecord {
  std::string id;
  Tensor pixels;  // [3,H,W], values in [0,1]
  std::optional<int> label;
  std::string source;

  int height() const { return pixels.dim(1); }
  int width() const { return pixels.dim(2); }
};

// Reads an 8-bit PNG or binary/ASCII PPM/PGM. Grayscale inputs are replicated
// to three channels; alpha is dropped. FormatError for anything else,
// DataError if the file is truncated or undecodable.
ImageRecord load_image(const std::filesystem::path& path);

// Writes [3,H,W] (RGB) or [1,H,W] / [H,W] (grayscale) values in [0,1] as an
// 8-bit PNG, rounding to the nearest level.
void save_png(const std::filesystem::path& path, const Tensor& image);
// Binary PPM (P6) for [3,H,W] or PGM (P5) for [1,H,W].
void save_ppm(const std::filesystem::path& path, const Tensor& image);

// Bilinear resampling of a [C,H,W] image with pixel-centre alignment.
// Returns the input unchanged when the size already matches.
Tensor resize_bilinear(const Tensor& image, int height, int width);

// 0.299 R + 0.587 G + 0.114 B of a [3,H,W] image, as [H,W].
Tensor luminance(const Tensor& image);

}  // namespace spmim
