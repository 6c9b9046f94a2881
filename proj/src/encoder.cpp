#include "spmim/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "spmim/errors.hpp"
#include "spmim/rng.hpp"

namespace spmim {
namespace {

// 3x3 "same" padding: output = input / stride exactly for even inputs.
Conv2dOptions same3x3(int stride, int groups) {
  return stride == 1 ? Conv2dOptions{1, 1, groups, 1} : Conv2dOptions{2, 0, groups, 1};
}

}  // namespace

EncoderConfig EncoderConfig::default_config() {
  EncoderConfig c;
  c.in_channels = 3;
  c.stem_channels = 16;
  c.stem_stride = 2;
  c.stages = {
      {16, 1, 1.0, 1, 0.0},  {24, 2, 4.0, 2, 0.0}, {32, 2, 4.0, 2, 0.0},
      {64, 2, 4.0, 2, 0.1},  {96, 1, 4.0, 1, 0.1}, {128, 2, 4.0, 1, 0.2},
  };
  c.scales = 5;
  return c;
}

int EncoderConfig::downsample_ratio() const {
  int ratio = stem_stride;
  for (const StageSpec& s : stages) ratio *= s.stride;
  return ratio;
}

std::vector<int> EncoderConfig::effective_channels() const {
  std::vector<int> widths;
  for (const StageSpec& s : stages) widths.push_back(s.out_channels);
  if (channel_order.empty()) return widths;
  std::vector<int> out;
  for (int idx : channel_order) out.push_back(widths.at(static_cast<std::size_t>(idx)));
  return out;
}

void EncoderConfig::validate() const {
  if (in_channels < 1 || stem_channels < 1) throw ConfigError("encoder: channel counts must be positive");
  if (stem_stride != 1 && stem_stride != 2) throw ConfigError("encoder: stem stride must be 1 or 2");
  if (stages.empty()) throw ConfigError("encoder: at least one stage required");
  for (const StageSpec& s : stages) {
    if (s.out_channels < 1) throw ConfigError("encoder: stage out_channels must be positive");
    if (s.stride != 1 && s.stride != 2) throw ConfigError("encoder: stage stride must be 1 or 2");
    if (!(s.expansion >= 1.0)) throw ConfigError("encoder: stage expansion must be >= 1");
    if (s.repeats < 1) throw ConfigError("encoder: stage repeats must be >= 1");
    if (!(s.dropout_p >= 0.0 && s.dropout_p < 1.0)) throw ConfigError("encoder: dropout must lie in [0, 1)");
  }
  if (!channel_order.empty()) {
    std::vector<int> sorted = channel_order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (sorted.size() != stages.size() || sorted[i] != static_cast<int>(i)) {
        throw ConfigError("encoder: channel_order must be a permutation of the stage indices");
      }
    }
  }
  if (scales < 1) throw ConfigError("encoder: scales must be >= 1");
  const int expected = 1 << scales;
  if (downsample_ratio() != expected) {
    throw ConfigError("encoder: downsampling ratio " + std::to_string(downsample_ratio()) +
                      " does not match the " + std::to_string(scales) + "-scale mask geometry (" +
                      std::to_string(expected) + ")");
  }
}

nlohmann::json EncoderConfig::to_json() const {
  nlohmann::json stages_json = nlohmann::json::array();
  for (const StageSpec& s : stages) {
    stages_json.push_back({{"out_channels", s.out_channels},
                           {"stride", s.stride},
                           {"expansion", s.expansion},
                           {"repeats", s.repeats},
                           {"dropout_p", s.dropout_p}});
  }
  return {{"in_channels", in_channels},   {"stem_channels", stem_channels}, {"stem_stride", stem_stride},
          {"stages", stages_json},         {"channel_order", channel_order}, {"scales", scales}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  try {
    EncoderConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.stem_channels = j.at("stem_channels").get<int>();
    c.stem_stride = j.at("stem_stride").get<int>();
    c.scales = j.at("scales").get<int>();
    c.channel_order = j.at("channel_order").get<std::vector<int>>();
    for (const auto& s : j.at("stages")) {
      c.stages.push_back({s.at("out_channels").get<int>(), s.at("stride").get<int>(),
                          s.at("expansion").get<double>(), s.at("repeats").get<int>(),
                          s.at("dropout_p").get<double>()});
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("encoder config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

InvertedResidual::InvertedResidual(const std::string& name, int in_channels, int out_channels, int stride,
                                   double expansion, double dropout_p, std::mt19937_64& rng)
    : dropout_p_(dropout_p), stride_(stride), residual_(stride == 1 && in_channels == out_channels) {
  const int hidden = std::max(1, static_cast<int>(std::lround(in_channels * expansion)));
  if (expansion != 1.0) {
    expand_ = std::make_unique<ConvLayer>(name + ".expand", in_channels, hidden, 1, 1, 0, 1, false, rng);
    expand_bn_ = std::make_unique<BatchNormLayer>(name + ".expand_bn", hidden);
  }
  const int dw_channels = expand_ ? hidden : in_channels;
  depthwise_ = ConvLayer(name + ".depthwise", dw_channels, dw_channels, 3, same3x3(stride, dw_channels), false, rng);
  depthwise_bn_ = BatchNormLayer(name + ".depthwise_bn", dw_channels);
  project_ = ConvLayer(name + ".project", dw_channels, out_channels, 1, 1, 0, 1, false, rng);
  project_bn_ = BatchNormLayer(name + ".project_bn", out_channels);
}

Var InvertedResidual::forward(Graph& g, Var x, const SpatialMask* mask_in, const SpatialMask* mask_out,
                              Mode mode, ExecutionPath path, std::uint64_t dropout_seed) {
  Var h = x;
  if (expand_) {
    h = sparse_conv(g, *expand_, h, mask_in, mask_in, path);
    h = ops::relu6(masked_batchnorm(g, *expand_bn_, h, mask_in, mode));
  }
  h = sparse_conv(g, depthwise_, h, mask_in, mask_out, path);
  h = ops::relu6(masked_batchnorm(g, depthwise_bn_, h, mask_out, mode));
  h = dropout(h, dropout_p_, mode, dropout_seed);
  h = sparse_conv(g, project_, h, mask_out, mask_out, path);
  h = masked_batchnorm(g, project_bn_, h, mask_out, mode);
  if (residual_) h = ops::add(h, x);
  return h;
}

void InvertedResidual::collect(ParameterList& list) {
  if (expand_) {
    expand_->collect(list);
    expand_bn_->collect(list);
  }
  depthwise_.collect(list);
  depthwise_bn_.collect(list);
  project_.collect(list);
  project_bn_.collect(list);
}

// ---------------------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(derive_seed(seed, {kInitStream, 1}));

  stem_ = ConvLayer("encoder.stem", config_.in_channels, config_.stem_channels, 3, same3x3(config_.stem_stride, 1),
                    false, rng);
  stem_bn_ = BatchNormLayer("encoder.stem_bn", config_.stem_channels);
  stem_level_ = config_.stem_stride == 2 ? 1 : 0;

  scale_channels_.assign(static_cast<std::size_t>(config_.scales), 0);
  std::vector<int> last_block_at_level(static_cast<std::size_t>(config_.scales) + 1, -2);
  if (stem_level_ > 0) last_block_at_level[1] = -1;

  const std::vector<int> widths = config_.effective_channels();
  int in_channels = config_.stem_channels;
  int level = stem_level_;
  for (std::size_t s = 0; s < config_.stages.size(); ++s) {
    const StageSpec& spec = config_.stages[s];
    for (int r = 0; r < spec.repeats; ++r) {
      const int stride = r == 0 ? spec.stride : 1;
      if (stride == 2) ++level;
      const std::string name = "encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(r + 1);
      blocks_.emplace_back(name, in_channels, widths[s], stride, spec.expansion, spec.dropout_p, rng);
      block_level_.push_back(level);
      if (level > 0) last_block_at_level[static_cast<std::size_t>(level)] = static_cast<int>(blocks_.size()) - 1;
      in_channels = widths[s];
    }
  }

  block_is_tap_.assign(blocks_.size(), false);
  for (int lvl = 1; lvl <= config_.scales; ++lvl) {
    const int owner = last_block_at_level[static_cast<std::size_t>(lvl)];
    if (owner == -2) throw ConfigError("encoder: no layer produces scale " + std::to_string(lvl));
    if (owner == -1) {
      stem_is_tap_ = true;
      scale_channels_[static_cast<std::size_t>(lvl - 1)] = config_.stem_channels;
    } else {
      block_is_tap_[static_cast<std::size_t>(owner)] = true;
      std::size_t stage = 0;
      int seen = 0;
      for (; stage < config_.stages.size(); ++stage) {
        seen += config_.stages[stage].repeats;
        if (owner < seen) break;
      }
      scale_channels_[static_cast<std::size_t>(lvl - 1)] = widths[stage];
    }
  }
}

EncoderOutput Encoder::forward(Graph& g, Var image, const BatchMasks* masks, Mode mode, ExecutionPath path,
                               std::uint64_t dropout_seed) {
  const Tensor& x = image.value();
  if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
    throw DimensionError("encoder input must be [N," + std::to_string(config_.in_channels) + ",H,W], got " +
                         shape_to_string(x.shape()));
  }
  const int ratio = config_.downsample_ratio();
  if (x.dim(2) % ratio != 0 || x.dim(3) % ratio != 0) {
    throw GeometryError("image " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                        " is not divisible by the downsampling ratio " + std::to_string(ratio));
  }
  if (masks) {
    if (masks->num_scales() != config_.scales) throw GeometryError("mask pyramid depth does not match encoder");
    masks->level(0).require_compatible(x.dim(0), x.dim(2), x.dim(3), "encoder pixel mask");
  }
  auto mask_at = [masks](int level) -> const SpatialMask* { return masks ? &masks->level(level) : nullptr; };

  EncoderOutput out;
  out.scales.resize(static_cast<std::size_t>(config_.scales));

  Var h = sparse_conv(g, stem_, image, mask_at(0), mask_at(stem_level_), path);
  h = ops::relu6(masked_batchnorm(g, stem_bn_, h, mask_at(stem_level_), mode));
  if (stem_is_tap_) out.scales[0] = h;

  int level = stem_level_;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const int next = block_level_[b];
    const std::uint64_t seed = derive_seed(dropout_seed, {kDropoutStream, b});
    h = blocks_[b].forward(g, h, mask_at(level), mask_at(next), mode, path, seed);
    level = next;
    if (block_is_tap_[b]) out.scales[static_cast<std::size_t>(level - 1)] = h;
  }
  return out;
}

void Encoder::collect(ParameterList& list) {
  stem_.collect(list);
  stem_bn_.collect(list);
  for (InvertedResidual& b : blocks_) b.collect(list);
}

std::size_t Encoder::parameter_count() {
  ParameterList list;
  collect(list);
  return list.parameter_count();
}

EncoderOutput encode(Encoder& model, Graph& g, const Tensor& images, const BatchMasks* masks, Mode mode) {
  return model.forward(g, g.constant(images), masks, mode);
}

}  // namespace spmim
