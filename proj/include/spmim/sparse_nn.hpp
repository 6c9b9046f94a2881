#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "spmim/autodiff.hpp"
#include "spmim/spatial_mask.hpp"

namespace spmim {

// Flat view over the learnable parameters and persistent buffers of a model,
// in a stable registration order (the checkpoint directory order).
struct ParameterList {
  std::vector<Parameter*> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;

  void add(Parameter& p) { params.push_back(&p); }
  void add_buffer(std::string name, Tensor& t) { buffers.emplace_back(std::move(name), &t); }
  std::size_t parameter_count() const;
  void zero_grad();
};

// How sparse convolutions are executed. Both paths produce bitwise equal
// results; kCompact skips the arithmetic at masked output positions.
enum class ExecutionPath { kEmulated, kCompact };

class ConvLayer {
 public:
  ConvLayer() = default;
  // He (fan-in) normal initialization; bias starts at zero.
  ConvLayer(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding,
            int groups, bool with_bias, std::mt19937_64& rng);
  ConvLayer(std::string name, int in_channels, int out_channels, int kernel, const Conv2dOptions& options,
            bool with_bias, std::mt19937_64& rng);

  int in_channels() const { return in_channels_; }
  int out_channels() const { return weight.value.dim(0); }
  const Conv2dOptions& options() const { return options_; }
  void collect(ParameterList& list);

  Parameter weight;
  std::optional<Parameter> bias;

 private:
  int in_channels_ = 0;
  Conv2dOptions options_;
};

class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  BatchNormLayer(std::string name, int channels, double momentum = 0.1, double eps = 1e-5);

  void collect(ParameterList& list);

  Parameter gamma;
  Parameter beta;
  BatchNormStats stats;

 private:
  std::string name_;
};

// conv2d(mask_zero(x, mask_in)) with masked outputs forced to zero. Null masks
// fall back to a dense convolution.
Var sparse_conv(Graph& g, ConvLayer& layer, Var x, const SpatialMask* mask_in,
                const SpatialMask* mask_out, ExecutionPath path = ExecutionPath::kCompact);

// Batch norm whose statistics see visible positions only.
Var masked_batchnorm(Graph& g, BatchNormLayer& layer, Var x, const SpatialMask* mask, Mode mode);

// Learned per-scale vectors substituted at masked positions before decoding.
class MaskEmbedding {
 public:
  MaskEmbedding() = default;
  MaskEmbedding(const std::vector<int>& channels_per_scale, double init_std, std::mt19937_64& rng);

  int num_scales() const { return static_cast<int>(vectors_.size()); }
  // Scale index is 1-based, matching the feature-map scales.
  Parameter& at(int scale) { return vectors_.at(static_cast<std::size_t>(scale - 1)); }
  void collect(ParameterList& list);

 private:
  std::vector<Parameter> vectors_;
};

// Visible positions copy `features`; masked positions get the scale's
// embedding vector.
Var densify(Graph& g, Var features, const SpatialMask& mask, MaskEmbedding& embedding, int scale);

// Bernoulli keep-mask scaled by 1/(1-p), drawn from `seed`.
Tensor dropout_mask(const Shape& shape, double p, std::uint64_t seed);

// Inverted dropout; identity in eval mode or when p == 0.
Var dropout(Var x, double p, Mode mode, std::uint64_t seed);

}  // namespace spmim
