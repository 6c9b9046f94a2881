#include "spmim/model.hpp"

#include <cmath>

#include "spmim/errors.hpp"
#include "spmim/rng.hpp"

namespace spmim {

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate(encoder.scales);
  if (!(embedding_init_std >= 0.0)) throw ConfigError("mask embedding init std must be >= 0");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"encoder", encoder.to_json()},
          {"decoder", decoder.to_json()},
          {"embedding_init_std", embedding_init_std},
          {"normalize_target", normalize_target}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.encoder = EncoderConfig::from_json(j.at("encoder"));
    c.decoder = DecoderConfig::from_json(j.at("decoder"));
    c.embedding_init_std = j.at("embedding_init_std").get<double>();
    c.normalize_target = j.at("normalize_target").get<bool>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

namespace {
std::mt19937_64 embedding_rng(std::uint64_t seed) { return std::mt19937_64(derive_seed(seed, {kInitStream, 3})); }
}  // namespace

MaskedAutoencoder::MaskedAutoencoder(const ModelConfig& config, std::uint64_t seed)
    : config_((config.validate(), config)),
      encoder_(config_.encoder, seed),
      embedding_([&] {
        auto rng = embedding_rng(seed);
        return MaskEmbedding(encoder_.scale_channels(), config_.embedding_init_std, rng);
      }()),
      decoder_(config_.decoder, encoder_.scale_channels(), seed) {}

ReconstructionPass MaskedAutoencoder::forward(Graph& g, const Tensor& input, const Tensor& target,
                                              const BatchMasks& masks, Mode mode, ExecutionPath path,
                                              std::uint64_t dropout_seed) {
  if (input.shape() != target.shape()) {
    throw DimensionError("reconstruction target " + shape_to_string(target.shape()) + " does not match input " +
                         shape_to_string(input.shape()));
  }
  ReconstructionPass pass;
  pass.features = encoder_.forward(g, g.constant(input), &masks, mode, path, dropout_seed);
  const int scales = encoder_.num_scales();
  for (int i = 1; i <= scales; ++i) {
    pass.densified.push_back(densify(g, pass.features.scale(i), masks.level(i), embedding_, i));
  }
  pass.decoded = decoder_.decode(g, pass.densified, mode);
  pass.recon = decoder_.reconstruct_head(g, pass.decoded.at(1));
  const Tensor scored =
      config_.normalize_target ? normalize_patches(target, config_.encoder.downsample_ratio()) : target;
  if (masks.level(0).masked_count() > 0) pass.loss = ops::masked_mse(pass.recon, scored, masks.level(0));
  return pass;
}

void MaskedAutoencoder::collect(ParameterList& list) {
  encoder_.collect(list);
  embedding_.collect(list);
  decoder_.collect(list);
}

Tensor normalize_patches(const Tensor& images, int patch, double eps) {
  if (images.rank() != 4 || patch < 1 || images.dim(2) % patch != 0 || images.dim(3) % patch != 0) {
    throw GeometryError("normalize_patches: " + shape_to_string(images.shape()) + " does not tile by " +
                        std::to_string(patch));
  }
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensor out = images;
  const double count = static_cast<double>(c) * patch * patch;
  for (int s = 0; s < n; ++s) {
    for (int pr = 0; pr < h; pr += patch) {
      for (int pc = 0; pc < w; pc += patch) {
        double sum = 0.0;
        for (int ch = 0; ch < c; ++ch)
          for (int y = pr; y < pr + patch; ++y)
            for (int x = pc; x < pc + patch; ++x) sum += images.at(s, ch, y, x);
        const double mean = sum / count;
        double var = 0.0;
        for (int ch = 0; ch < c; ++ch)
          for (int y = pr; y < pr + patch; ++y)
            for (int x = pc; x < pc + patch; ++x) {
              const double d = images.at(s, ch, y, x) - mean;
              var += d * d;
            }
        const double inv = 1.0 / std::sqrt(var / count + eps);
        for (int ch = 0; ch < c; ++ch)
          for (int y = pr; y < pr + patch; ++y)
            for (int x = pc; x < pc + patch; ++x) out.at(s, ch, y, x) = (images.at(s, ch, y, x) - mean) * inv;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void ClassifierConfig::validate() const {
  encoder.validate();
  if (num_classes < 2) throw ConfigError("classifier: num_classes must be >= 2");
  if (!(head_dropout >= 0.0 && head_dropout < 1.0)) throw ConfigError("classifier: head dropout must lie in [0, 1)");
}

nlohmann::json ClassifierConfig::to_json() const {
  return {{"encoder", encoder.to_json()}, {"num_classes", num_classes}, {"head_dropout", head_dropout}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  try {
    ClassifierConfig c;
    c.encoder = EncoderConfig::from_json(j.at("encoder"));
    c.num_classes = j.at("num_classes").get<int>();
    c.head_dropout = j.at("head_dropout").get<double>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("classifier config: ") + e.what());
  }
}

ClassifierHead::ClassifierHead(int in_features, int num_classes, double dropout_p, std::mt19937_64& rng)
    : weight("head.weight", Tensor::normal({num_classes, in_features}, 0.01, rng)),
      bias("head.bias", Tensor::zeros({num_classes})),
      dropout_p_(dropout_p) {}

Var ClassifierHead::forward(Graph& g, Var features, Mode mode, std::uint64_t dropout_seed) {
  Var pooled = ops::global_avg_pool(features);
  pooled = dropout(pooled, dropout_p_, mode, dropout_seed);
  return ops::linear(pooled, g.param(weight), g.param(bias));
}

void ClassifierHead::collect(ParameterList& list) {
  list.add(weight);
  list.add(bias);
}

Classifier::Classifier(const ClassifierConfig& config, std::uint64_t seed)
    : config_((config.validate(), config)), encoder_(config_.encoder, seed) {
  std::mt19937_64 rng(derive_seed(seed, {kInitStream, 4}));
  head_ = ClassifierHead(encoder_.scale_channels().back(), config_.num_classes, config_.head_dropout, rng);
}

ClassifierPass Classifier::forward(Graph& g, const Tensor& images, Mode mode, std::uint64_t dropout_seed,
                                   bool freeze_encoder) {
  ClassifierPass pass;
  pass.features = encoder_.forward(g, g.constant(images), nullptr, freeze_encoder ? Mode::kEval : mode, ExecutionPath::kCompact,
                                   derive_seed(dropout_seed, {1}));
  pass.logits = head_.forward(g, pass.features.scales.back(), mode, derive_seed(dropout_seed, {2}));
  return pass;
}

void Classifier::collect(ParameterList& list) {
  encoder_.collect(list);
  head_.collect(list);
}

}  // namespace spmim
