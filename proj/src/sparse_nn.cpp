#include "spmim/sparse_nn.hpp"

#include <cmath>

#include "spmim/errors.hpp"
#include "spmim/rng.hpp"

namespace spmim {

std::size_t ParameterList::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->value.numel();
  return n;
}

void ParameterList::zero_grad() {
  for (Parameter* p : params) p->zero_grad();
}

ConvLayer::ConvLayer(std::string name, int in_channels, int out_channels, int kernel, int stride,
                     int padding, int groups, bool with_bias, std::mt19937_64& rng)
    : ConvLayer(std::move(name), in_channels, out_channels, kernel, Conv2dOptions{stride, padding, groups},
                with_bias, rng) {}

ConvLayer::ConvLayer(std::string name, int in_channels, int out_channels, int kernel, const Conv2dOptions& options,
                     bool with_bias, std::mt19937_64& rng)
    : in_channels_(in_channels), options_(options) {
  const int groups = options.groups;
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ConfigError(name + ": channels not divisible by groups");
  }
  const int fan_in = (in_channels / groups) * kernel * kernel;
  weight = Parameter(name + ".weight", Tensor::normal({out_channels, in_channels / groups, kernel, kernel},
                                                      std::sqrt(2.0 / fan_in), rng));
  if (with_bias) bias = Parameter(name + ".bias", Tensor::zeros({out_channels}));
}

void ConvLayer::collect(ParameterList& list) {
  list.add(weight);
  if (bias) list.add(*bias);
}

BatchNormLayer::BatchNormLayer(std::string name, int channels, double momentum, double eps)
    : gamma(name + ".gamma", Tensor::full({channels}, 1.0)),
      beta(name + ".beta", Tensor::zeros({channels})),
      name_(std::move(name)) {
  stats.running_mean = Tensor::zeros({channels});
  stats.running_var = Tensor::full({channels}, 1.0);
  stats.momentum = momentum;
  stats.eps = eps;
}

void BatchNormLayer::collect(ParameterList& list) {
  list.add(gamma);
  list.add(beta);
  list.add_buffer(name_ + ".running_mean", stats.running_mean);
  list.add_buffer(name_ + ".running_var", stats.running_var);
}

Var sparse_conv(Graph& g, ConvLayer& layer, Var x, const SpatialMask* mask_in, const SpatialMask* mask_out,
                ExecutionPath path) {
  Var w = g.param(layer.weight);
  std::optional<Var> b;
  if (layer.bias) b = g.param(*layer.bias);
  if (!mask_in && !mask_out) return ops::conv2d(x, w, b, layer.options());
  if (!mask_in || !mask_out) throw ArgumentError("sparse_conv needs both input and output masks");

  const Tensor& xv = x.value();
  if (xv.rank() != 4 || mask_in->height() != xv.dim(2) || mask_in->width() != xv.dim(3)) {
    throw GeometryError("sparse_conv: input mask does not match the input resolution");
  }
  const Conv2dOptions& opt = layer.options();
  const int out_h = conv_output_extent(xv.dim(2), layer.weight.value.dim(2), opt.stride, opt.padding,
                                       opt.trailing_padding());
  const int out_w = conv_output_extent(xv.dim(3), layer.weight.value.dim(3), opt.stride, opt.padding,
                                       opt.trailing_padding());
  if (mask_out->height() != out_h || mask_out->width() != out_w) {
    throw GeometryError("sparse_conv: output mask " + std::to_string(mask_out->height()) + "x" +
                        std::to_string(mask_out->width()) + " does not match the strided output " +
                        std::to_string(out_h) + "x" + std::to_string(out_w));
  }

  Var zeroed = ops::mask_zero(x, *mask_in);
  if (path == ExecutionPath::kCompact) return ops::conv2d(zeroed, w, b, opt, mask_out);
  return ops::mask_zero(ops::conv2d(zeroed, w, b, opt), *mask_out);
}

Var masked_batchnorm(Graph& g, BatchNormLayer& layer, Var x, const SpatialMask* mask, Mode mode) {
  return ops::batch_norm(x, g.param(layer.gamma), g.param(layer.beta), layer.stats, mode, mask);
}

MaskEmbedding::MaskEmbedding(const std::vector<int>& channels_per_scale, double init_std,
                             std::mt19937_64& rng) {
  for (std::size_t i = 0; i < channels_per_scale.size(); ++i) {
    vectors_.emplace_back("mask_embedding." + std::to_string(i + 1),
                          Tensor::normal({channels_per_scale[i]}, init_std, rng));
  }
}

void MaskEmbedding::collect(ParameterList& list) {
  for (Parameter& p : vectors_) list.add(p);
}

Var densify(Graph& g, Var features, const SpatialMask& mask, MaskEmbedding& embedding, int scale) {
  if (scale < 1 || scale > embedding.num_scales()) {
    throw ArgumentError("densify: no mask embedding for scale " + std::to_string(scale));
  }
  return ops::fill_masked(features, mask, g.param(embedding.at(scale)));
}

Tensor dropout_mask(const Shape& shape, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ArgumentError("dropout probability must lie in [0, 1)");
  Tensor keep(shape);
  std::mt19937_64 rng(seed);
  const double survivor_scale = 1.0 / (1.0 - p);
  for (double& v : keep.data()) v = uniform_unit(rng) < p ? 0.0 : survivor_scale;
  return keep;
}

Var dropout(Var x, double p, Mode mode, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ArgumentError("dropout probability must lie in [0, 1)");
  if (mode == Mode::kEval || p == 0.0) return x;
  return ops::mul_const(x, dropout_mask(x.value().shape(), p, seed));
}

}  // namespace spmim
