#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spmim/adamp.hpp"
#include "spmim/augment.hpp"
#include "spmim/checkpoint.hpp"
#include "spmim/model.hpp"

namespace spmim {

// Masked MSE with one base mask shared by the whole batch.
Var masked_mse_loss(Var recon, const Tensor& target, const MaskGrid& base_mask);
double masked_mse_loss(const Tensor& recon, const Tensor& target, const MaskGrid& base_mask);

enum class LrSchedule { kConstant, kCosine };

std::string to_string(LrSchedule s);
LrSchedule lr_schedule_from_string(const std::string& s);

// Learning rate at step `t` (0-based) of `total` steps.
double scheduled_lr(double base_lr, LrSchedule schedule, std::int64_t t, std::int64_t total);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  int steps = 0;
  double wall_ms = 0.0;

  // Deterministic fields only; wall time is reported separately.
  nlohmann::json to_json() const;
};

struct PretrainConfig {
  int epochs = 10;
  int batch_size = 8;
  double mask_ratio = 0.6;
  AdamPOptions optimizer;
  LrSchedule schedule = LrSchedule::kConstant;
  std::optional<AugmentPolicy> augment;
  ExecutionPath path = ExecutionPath::kCompact;

  void validate() const;
  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EpochRecord> report;
  std::vector<double> step_losses;
  Checkpoint checkpoint;  // state after the last completed epoch
};

// Called after each epoch with the record and a checkpoint of the state.
using EpochCallback = std::function<void(const EpochRecord&, const Checkpoint&)>;

// Per step: draw a base mask for each image, build its pyramid, run the
// sparse encoder, densify, decode, score the masked pixels and take an AdamP
// step. Mask, augmentation, dropout and shuffling streams all derive from
// `seed`. `resume` continues from a checkpoint written by this function.
TrainResult pretrain(MaskedAutoencoder& model, std::span<const ImageRecord> images, const PretrainConfig& config,
                     std::uint64_t seed, const Checkpoint* resume = nullptr, const EpochCallback& on_epoch = {});

// Masks used for image `index` in `epoch` (1-based epoch).
MaskGrid pretrain_mask(const MaskedAutoencoder& model, int image_h, int image_w, double ratio, std::uint64_t seed,
                       int epoch, int index);

struct FinetuneConfig {
  int epochs = 300;
  int batch_size = 16;
  AdamPOptions optimizer;
  LrSchedule schedule = LrSchedule::kConstant;
  std::optional<AugmentPolicy> augment;
  bool freeze_encoder = false;

  void validate() const;
  nlohmann::json to_json() const;
};

// Copies the encoder weights of a pretraining checkpoint into `model`.
// ConfigError when the checkpoint's encoder config differs.
void load_pretrained_encoder(Classifier& model, const Checkpoint& pretrained);

// Cross-entropy training on whole (unmasked) images. With `pretrained`, the
// encoder starts from its weights; without, from the model's own init.
TrainResult finetune(Classifier& model, const Checkpoint* pretrained, std::span<const ImageRecord> records,
                     const FinetuneConfig& config, std::uint64_t seed, const Checkpoint* resume = nullptr,
                     const EpochCallback& on_epoch = {});

// Softmax probabilities [N, K] in eval mode.
Tensor predict_proba(Classifier& model, std::span<const ImageRecord> records, int batch_size = 16);

Tensor batch_pixels(std::span<const ImageRecord> records, std::span<const int> indices);

Checkpoint capture_autoencoder(MaskedAutoencoder& model);
Checkpoint capture_classifier(Classifier& model);
// Restore weights; ConfigError if the checkpoint was made for another config.
void restore_autoencoder(MaskedAutoencoder& model, const Checkpoint& ckpt);
void restore_classifier(Classifier& model, const Checkpoint& ckpt);

}  // namespace spmim
