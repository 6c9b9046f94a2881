#include "spmim/decoder.hpp"

#include "spmim/errors.hpp"
#include "spmim/rng.hpp"

namespace spmim {

DecoderConfig DecoderConfig::uniform(int scales, int width) {
  DecoderConfig c;
  c.channels.assign(static_cast<std::size_t>(scales), width);
  return c;
}

void DecoderConfig::validate(int encoder_scales) const {
  if (static_cast<int>(channels.size()) != encoder_scales) {
    throw ConfigError("decoder: expected " + std::to_string(encoder_scales) + " channel widths, got " +
                      std::to_string(channels.size()));
  }
  for (int c : channels)
    if (c < 1) throw ConfigError("decoder: channel widths must be positive");
  if (out_channels < 1) throw ConfigError("decoder: out_channels must be positive");
}

nlohmann::json DecoderConfig::to_json() const {
  return {{"channels", channels}, {"out_channels", out_channels}};
}

DecoderConfig DecoderConfig::from_json(const nlohmann::json& j) {
  try {
    DecoderConfig c;
    c.channels = j.at("channels").get<std::vector<int>>();
    c.out_channels = j.at("out_channels").get<int>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("decoder config: ") + e.what());
  }
}

UpBlock::UpBlock(const std::string& name, int in_channels, int out_channels, std::mt19937_64& rng)
    : conv(name + ".conv", in_channels, out_channels, 3, 1, 1, 1, false, rng), bn(name + ".bn", out_channels) {}

Var UpBlock::forward(Graph& g, Var x, Mode mode) {
  Var h = ops::upsample_nearest2x(x);
  h = sparse_conv(g, conv, h, nullptr, nullptr);
  return ops::relu6(masked_batchnorm(g, bn, h, nullptr, mode));
}

void UpBlock::collect(ParameterList& list) {
  conv.collect(list);
  bn.collect(list);
}

Decoder::Decoder(const DecoderConfig& config, const std::vector<int>& encoder_channels, std::uint64_t seed)
    : config_(config), encoder_channels_(encoder_channels) {
  config_.validate(static_cast<int>(encoder_channels.size()));
  std::mt19937_64 rng(derive_seed(seed, {kInitStream, 2}));
  const int scales = num_scales();
  for (int i = 1; i <= scales; ++i) {
    projections_.emplace_back("decoder.phi" + std::to_string(i), encoder_channels_[static_cast<std::size_t>(i - 1)],
                              config_.channels[static_cast<std::size_t>(i - 1)], 1, 1, 0, 1, true, rng);
  }
  for (int i = 1; i < scales; ++i) {
    blocks_.emplace_back("decoder.block" + std::to_string(i), config_.channels[static_cast<std::size_t>(i)],
                         config_.channels[static_cast<std::size_t>(i - 1)], rng);
  }
  head_ = ConvLayer("decoder.head", config_.channels[0], config_.out_channels, 1, 1, 0, 1, true, rng);
}

Var Decoder::project(Graph& g, int i, Var s_prime) {
  ConvLayer& phi = projection(i);
  if (s_prime.value().rank() != 4 || s_prime.value().dim(1) != phi.in_channels()) {
    throw DimensionError("decoder projection " + std::to_string(i) + " expects " +
                         std::to_string(phi.in_channels()) + " channels, got " +
                         shape_to_string(s_prime.value().shape()));
  }
  return sparse_conv(g, phi, s_prime, nullptr, nullptr);
}

DecoderState Decoder::decode(Graph& g, const std::vector<Var>& s_prime, Mode mode) {
  const int scales = num_scales();
  if (static_cast<int>(s_prime.size()) != scales) {
    throw ArgumentError("decoder: expected " + std::to_string(scales) + " feature maps, got " +
                        std::to_string(s_prime.size()));
  }
  for (const Var& v : s_prime)
    if (!v.valid()) throw ArgumentError("decoder: missing feature map");

  DecoderState state;
  state.maps.resize(static_cast<std::size_t>(scales));
  state.maps[static_cast<std::size_t>(scales - 1)] = project(g, scales, s_prime.back());
  for (int i = scales - 1; i >= 1; --i) {
    Var up = block(i).forward(g, state.at(i + 1), mode);
    Var skip = project(g, i, s_prime[static_cast<std::size_t>(i - 1)]);
    if (up.value().shape() != skip.value().shape()) {
      throw GeometryError("decoder: scale " + std::to_string(i) + " size mismatch " +
                          shape_to_string(up.value().shape()) + " vs " + shape_to_string(skip.value().shape()));
    }
    state.maps[static_cast<std::size_t>(i - 1)] = ops::add(up, skip);
  }
  return state;
}

Var Decoder::reconstruct_head(Graph& g, Var d1) {
  return sparse_conv(g, head_, ops::upsample_nearest2x(d1), nullptr, nullptr);
}

void Decoder::collect(ParameterList& list) {
  for (ConvLayer& p : projections_) p.collect(list);
  for (UpBlock& b : blocks_) b.collect(list);
  head_.collect(list);
}

}  // namespace spmim
