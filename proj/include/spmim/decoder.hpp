#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "spmim/sparse_nn.hpp"

namespace spmim {

struct DecoderConfig {
  // Width of D_1..D_L (finest scale first).
  std::vector<int> channels;
  int out_channels = 3;

  static DecoderConfig uniform(int scales, int width);

  void validate(int encoder_scales) const;
  nlohmann::json to_json() const;
  static DecoderConfig from_json(const nlohmann::json& j);

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

// D_1..D_L, index 0 = D_1.
struct DecoderState {
  std::vector<Var> maps;

  const Var& at(int i) const { return maps.at(static_cast<std::size_t>(i - 1)); }
};

// upsample x2 -> 3x3 conv -> batch norm -> ReLU6
class UpBlock {
 public:
  UpBlock() = default;
  UpBlock(const std::string& name, int in_channels, int out_channels, std::mt19937_64& rng);

  Var forward(Graph& g, Var x, Mode mode);
  void collect(ParameterList& list);

  ConvLayer conv;
  BatchNormLayer bn;
};

// UNet-style decoder with additive skips:
//   D_L = phi_L(S'_L),  D_i = B_i(D_{i+1}) + phi_i(S'_i)  for i = L-1 .. 1,
// followed by a head (upsample x2, 1x1 conv) back to image resolution.
class Decoder {
 public:
  Decoder(const DecoderConfig& config, const std::vector<int>& encoder_channels, std::uint64_t seed);

  const DecoderConfig& config() const { return config_; }
  int num_scales() const { return static_cast<int>(config_.channels.size()); }

  // phi_i, 1-based.
  ConvLayer& projection(int i) { return projections_.at(static_cast<std::size_t>(i - 1)); }
  // B_i for i in 1..L-1.
  UpBlock& block(int i) { return blocks_.at(static_cast<std::size_t>(i - 1)); }
  ConvLayer& head() { return head_; }

  Var project(Graph& g, int i, Var s_prime);
  DecoderState decode(Graph& g, const std::vector<Var>& s_prime, Mode mode);
  Var reconstruct_head(Graph& g, Var d1);

  void collect(ParameterList& list);

 private:
  DecoderConfig config_;
  std::vector<int> encoder_channels_;
  std::vector<ConvLayer> projections_;
  std::vector<UpBlock> blocks_;
  ConvLayer head_;
};

}  // namespace spmim
