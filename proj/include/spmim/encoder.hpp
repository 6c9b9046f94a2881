#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "json.hpp"
#include "spmim/masking.hpp"
#include "spmim/sparse_nn.hpp"

namespace spmim {

struct StageSpec {
  int out_channels = 16;
  int stride = 1;          // 1 or 2, applied by the first block of the stage
  double expansion = 1.0;  // hidden width = round(in * expansion), >= 1
  int repeats = 1;
  double dropout_p = 0.0;  // applied after the depthwise stage of each block

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

// Declarative description of the hierarchical encoder: a stem convolution
// followed by stages of inverted residual bottlenecks.
struct EncoderConfig {
  int in_channels = 3;
  int stem_channels = 16;
  int stem_stride = 2;
  std::vector<StageSpec> stages;
  // Permutation applied to the stages' out_channels (stage i takes the width
  // listed for stage channel_order[i]). Empty means identity.
  std::vector<int> channel_order;
  // Number of 2x reductions the encoder must perform; feature maps are tapped
  // once per reduction, so this is also the number of scales.
  int scales = 5;

  static EncoderConfig default_config();

  int downsample_ratio() const;
  // Stage widths after channel_order is applied.
  std::vector<int> effective_channels() const;
  void validate() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Feature maps S_1..S_L (index 0 holds S_1).
struct EncoderOutput {
  std::vector<Var> scales;

  const Var& scale(int i) const { return scales.at(static_cast<std::size_t>(i - 1)); }
};

// MobileNetV2 inverted residual: 1x1 expand -> BN -> ReLU6 -> 3x3 depthwise
// -> BN -> ReLU6 -> dropout -> 1x1 linear projection -> BN (+ identity).
class InvertedResidual {
 public:
  InvertedResidual(const std::string& name, int in_channels, int out_channels, int stride, double expansion,
                   double dropout_p, std::mt19937_64& rng);

  Var forward(Graph& g, Var x, const SpatialMask* mask_in, const SpatialMask* mask_out, Mode mode,
              ExecutionPath path, std::uint64_t dropout_seed);
  void collect(ParameterList& list);

  bool has_residual() const { return residual_; }
  bool has_expand() const { return expand_ != nullptr; }
  int stride() const { return stride_; }

 private:
  std::unique_ptr<ConvLayer> expand_;
  std::unique_ptr<BatchNormLayer> expand_bn_;
  ConvLayer depthwise_;
  BatchNormLayer depthwise_bn_;
  ConvLayer project_;
  BatchNormLayer project_bn_;
  double dropout_p_;
  int stride_;
  bool residual_;
};

class Encoder {
 public:
  Encoder(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  int num_scales() const { return config_.scales; }
  // Channel count of each S_i, index 0 = S_1.
  const std::vector<int>& scale_channels() const { return scale_channels_; }

  // Null `masks` runs the dense network. With masks, every convolution is a
  // sparse convolution and every norm a masked norm, so visible activations
  // depend on visible pixels only.
  EncoderOutput forward(Graph& g, Var image, const BatchMasks* masks, Mode mode,
                        ExecutionPath path = ExecutionPath::kCompact, std::uint64_t dropout_seed = 0);

  void collect(ParameterList& list);
  std::size_t parameter_count();
  const std::vector<InvertedResidual>& blocks() const { return blocks_; }

 private:
  EncoderConfig config_;
  ConvLayer stem_;
  BatchNormLayer stem_bn_;
  std::vector<InvertedResidual> blocks_;
  // Scale exponent after each block, and whether the block output is a tap.
  std::vector<int> block_level_;
  std::vector<bool> block_is_tap_;
  int stem_level_ = 0;
  bool stem_is_tap_ = false;
  std::vector<int> scale_channels_;
};

EncoderOutput encode(Encoder& model, Graph& g, const Tensor& images, const BatchMasks* masks, Mode mode);

}  // namespace spmim
