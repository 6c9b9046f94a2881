#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "spmim/decoder.hpp"
#include "spmim/encoder.hpp"
#include "spmim/masking.hpp"

namespace spmim {

struct ModelConfig {
  EncoderConfig encoder = EncoderConfig::default_config();
  DecoderConfig decoder = DecoderConfig::uniform(5, 32);
  double embedding_init_std = 0.02;
  // Regress per-patch standardized pixels instead of raw ones.
  bool normalize_target = false;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ReconstructionPass {
  EncoderOutput features;
  std::vector<Var> densified;  // S'_1..S'_L
  DecoderState decoded;
  Var recon;                   // [N,3,H,W]
  Var loss;                    // masked MSE against the target; unset when nothing is masked
};

// Sparse encoder + per-scale mask embedding + dense decoder with a
// reconstruction head.
class MaskedAutoencoder {
 public:
  MaskedAutoencoder(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  Encoder& encoder() { return encoder_; }
  MaskEmbedding& embedding() { return embedding_; }
  Decoder& decoder() { return decoder_; }

  // `input` is what the encoder sees; `target` is what masked positions are
  // scored against (normally the same images).
  ReconstructionPass forward(Graph& g, const Tensor& input, const Tensor& target, const BatchMasks& masks,
                             Mode mode, ExecutionPath path = ExecutionPath::kCompact,
                             std::uint64_t dropout_seed = 0);

  // Encoder, then embedding, then decoder.
  void collect(ParameterList& list);

 private:
  ModelConfig config_;
  Encoder encoder_;
  MaskEmbedding embedding_;
  Decoder decoder_;
};

// Standardizes each patch x patch block of every sample (all channels
// together) to zero mean and unit variance.
Tensor normalize_patches(const Tensor& images, int patch, double eps = 1e-6);

struct ClassifierConfig {
  EncoderConfig encoder = EncoderConfig::default_config();
  int num_classes = 2;
  double head_dropout = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

// Global average pool of the coarsest scale -> dropout -> affine.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(int in_features, int num_classes, double dropout_p, std::mt19937_64& rng);

  Var forward(Graph& g, Var features, Mode mode, std::uint64_t dropout_seed);
  void collect(ParameterList& list);

  Parameter weight;  // [K, F]
  Parameter bias;    // [K]

 private:
  double dropout_p_ = 0.0;
};

struct ClassifierPass {
  EncoderOutput features;
  Var logits;
};

class Classifier {
 public:
  Classifier(const ClassifierConfig& config, std::uint64_t seed);

  const ClassifierConfig& config() const { return config_; }
  Encoder& encoder() { return encoder_; }
  ClassifierHead& head() { return head_; }

  // A frozen encoder always runs in eval mode (fixed running statistics).
  ClassifierPass forward(Graph& g, const Tensor& images, Mode mode, std::uint64_t dropout_seed = 0,
                         bool freeze_encoder = false);

  void collect(ParameterList& list);
  void collect_encoder(ParameterList& list) { encoder_.collect(list); }
  void collect_head(ParameterList& list) { head_.collect(list); }

 private:
  ClassifierConfig config_;
  Encoder encoder_;
  ClassifierHead head_;
};

}  // namespace spmim
