#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "spmim/autodiff.hpp"
#include "spmim/encoder.hpp"
#include "spmim/image_io.hpp"
#include "spmim/model.hpp"
#include "spmim/sparse_nn.hpp"

namespace spmim::test {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

// Stem stride 2 plus two stride-2 stages: 8x downsampling, three scales.
EncoderConfig tiny_encoder();
ModelConfig tiny_model(int decoder_width = 4);

// Random small encoder (2-4 scales, widths <= 8, random expansion/repeats).
EncoderConfig random_tiny_encoder(std::mt19937_64& rng);

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t coords = 0;
};

// Compares Parameter::grad from one backward pass of `build` against central
// differences, for every coordinate (or every `stride`-th) of every parameter.
// Relative errors use max(|analytic|, |numeric|, floor) as denominator.
GradCheck check_parameter_grads(const std::vector<Parameter*>& params, const std::function<Var(Graph&)>& build,
                                double h = 1e-5, std::size_t stride = 1, double floor = 1e-6);

// Smooth synthetic RGB images in [0,1]: sums of a few Gaussian blobs.
std::vector<ImageRecord> smooth_images(int count, int size, std::uint64_t seed);

// Direct sliding-window cross-correlation.
Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad_begin, int pad_end,
                    int groups);

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace spmim::test
