#include "spmim/training.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "spmim/errors.hpp"
#include "spmim/rng.hpp"

namespace spmim {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void require_uniform_geometry(std::span<const ImageRecord> images) {
  if (images.empty()) throw DataError("training set is empty");
  const Shape& first = images.front().pixels.shape();
  if (first.size() != 3 || first[0] != 3) throw DataError("images must be [3,H,W]");
  for (const ImageRecord& r : images) {
    if (r.pixels.shape() != first) {
      throw DataError("image " + r.id + " has shape " + shape_to_string(r.pixels.shape()) + ", expected " +
                      shape_to_string(first));
    }
  }
}

Tensor batch_input(std::span<const ImageRecord> records, std::span<const int> indices,
                   const std::optional<AugmentPolicy>& policy, std::uint64_t seed, int epoch) {
  if (!policy) return batch_pixels(records, indices);
  std::vector<Tensor> items;
  items.reserve(indices.size());
  for (int idx : indices) {
    const std::uint64_t s = derive_seed(seed, {kAugmentStream, static_cast<std::uint64_t>(epoch),
                                               static_cast<std::uint64_t>(idx)});
    items.push_back(augment(records[static_cast<std::size_t>(idx)], *policy, s).pixels);
  }
  return stack(items);
}

int start_epoch_from(const Checkpoint* resume, const std::string& kind, std::uint64_t seed) {
  if (!resume) return 0;
  if (resume->meta.value("kind", "") != kind) throw ConfigError("resume checkpoint is not a " + kind + " checkpoint");
  if (resume->meta.value("seed", std::uint64_t{0}) != seed) {
    throw ConfigError("resume checkpoint was written with a different seed");
  }
  return resume->meta.value("epoch", 0);
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, std::uint64_t seed, int epoch) {
  std::mt19937_64 rng(derive_seed(seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)}));
  const std::vector<int> order = shuffled_indices(n, rng);
  std::vector<std::vector<int>> batches;
  for (int b = 0; b < n; b += batch_size) {
    batches.emplace_back(order.begin() + b, order.begin() + std::min(n, b + batch_size));
  }
  return batches;
}

void validate_optimizer(const AdamPOptions& o) {
  if (!(o.lr > 0.0)) throw ConfigError("optimizer: lr must be positive");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0)) {
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  }
  if (!(o.eps > 0.0)) throw ConfigError("optimizer: eps must be positive");
  if (!(o.weight_decay >= 0.0) || !(o.delta >= 0.0) || !(o.wd_ratio >= 0.0)) {
    throw ConfigError("optimizer: weight_decay, delta and wd_ratio must be >= 0");
  }
}

}  // namespace

Var masked_mse_loss(Var recon, const Tensor& target, const MaskGrid& base_mask) {
  const Tensor& r = recon.value();
  if (r.rank() != 4) throw DimensionError("masked_mse_loss: recon must be [N,C,H,W]");
  return ops::masked_mse(recon, target, expand_mask(base_mask, r.dim(2), r.dim(3)));
}

double masked_mse_loss(const Tensor& recon, const Tensor& target, const MaskGrid& base_mask) {
  Graph g;
  return masked_mse_loss(g.constant(recon), target, base_mask).value().item();
}

std::string to_string(LrSchedule s) { return s == LrSchedule::kCosine ? "cosine" : "constant"; }

LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "constant") return LrSchedule::kConstant;
  if (s == "cosine") return LrSchedule::kCosine;
  throw ConfigError("unknown lr schedule '" + s + "' (expected constant or cosine)");
}

double scheduled_lr(double base_lr, LrSchedule schedule, std::int64_t t, std::int64_t total) {
  if (schedule == LrSchedule::kConstant || total <= 1) return base_lr;
  const double progress = static_cast<double>(std::min(t, total)) / static_cast<double>(total);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"mean_loss", mean_loss}, {"steps", steps}};
}

void PretrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("pretrain: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("pretrain: batch_size must be >= 1");
  if (!(mask_ratio > 0.0 && mask_ratio <= 1.0)) throw ConfigError("pretrain: mask ratio must lie in (0, 1]");
  validate_optimizer(optimizer);
  if (augment) augment->validate();
}

nlohmann::json PretrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"mask_ratio", mask_ratio},
          {"optimizer", optimizer.to_json()},
          {"schedule", to_string(schedule)},
          {"augment", augment ? augment->to_json() : nlohmann::json(nullptr)},
          {"path", path == ExecutionPath::kCompact ? "compact" : "emulated"}};
}

MaskGrid pretrain_mask(const MaskedAutoencoder& model, int image_h, int image_w, double ratio, std::uint64_t seed,
                       int epoch, int index) {
  const int d = model.config().encoder.downsample_ratio();
  if (image_h % d != 0 || image_w % d != 0) {
    throw GeometryError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                        " is not divisible by " + std::to_string(d));
  }
  return sample_mask(image_h / d, image_w / d, ratio,
                     derive_seed(seed, {kMaskStream, static_cast<std::uint64_t>(epoch),
                                        static_cast<std::uint64_t>(index)}));
}

TrainResult pretrain(MaskedAutoencoder& model, std::span<const ImageRecord> images, const PretrainConfig& config,
                     std::uint64_t seed, const Checkpoint* resume, const EpochCallback& on_epoch) {
  config.validate();
  require_uniform_geometry(images);
  const int n = static_cast<int>(images.size());
  int h = images.front().pixels.dim(1), w = images.front().pixels.dim(2);
  if (config.augment && config.augment->out_height > 0) {
    h = config.augment->out_height;
    w = config.augment->out_width;
  }

  ParameterList params;
  model.collect(params);
  AdamP opt(config.optimizer);
  const int start = start_epoch_from(resume, "pretrain", seed);
  if (resume) {
    restore_autoencoder(model, *resume);
    restore_optimizer(*resume, opt);
  }

  const std::int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::int64_t total_steps = steps_per_epoch * config.epochs;

  auto snapshot = [&](int epoch) {
    Checkpoint ckpt = capture_autoencoder(model);
    store_optimizer(ckpt, opt);
    ckpt.meta["epoch"] = epoch;
    ckpt.meta["seed"] = seed;
    ckpt.meta["training"] = config.to_json();
    return ckpt;
  };

  TrainResult result;
  result.checkpoint = snapshot(start);
  for (int epoch = start + 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    double loss_sum = 0.0;
    int steps = 0;
    for (const std::vector<int>& batch : epoch_batches(n, config.batch_size, seed, epoch)) {
      const Tensor input = batch_input(images, batch, config.augment, seed, epoch);
      std::vector<MaskPyramid> pyramids;
      for (int idx : batch) {
        pyramids.push_back(build_mask_pyramid(pretrain_mask(model, h, w, config.mask_ratio, seed, epoch, idx), h, w));
      }
      const BatchMasks masks = stack_pyramids(pyramids);
      const std::uint64_t step_seed =
          derive_seed(seed, {kDropoutStream, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(steps)});
      double loss = 0.0;
      try {
        Graph g;
        ReconstructionPass pass = model.forward(g, input, input, masks, Mode::kTrain, config.path, step_seed);
        if (!pass.loss.valid()) throw ConfigError("pretrain: mask ratio leaves no masked cell");
        loss = pass.loss.value().item();
        g.backward(pass.loss);
        opt.set_lr(scheduled_lr(config.optimizer.lr, config.schedule, opt.step_count(), total_steps));
        opt.step(params.params);
      } catch (const NumericalError& e) {
        throw NumericalError("pretraining diverged at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(steps + 1) + ": " + e.what());
      }
      result.step_losses.push_back(loss);
      loss_sum += loss;
      ++steps;
    }
    EpochRecord rec{epoch, loss_sum / steps, steps, elapsed_ms(t0)};
    result.report.push_back(rec);
    result.checkpoint = snapshot(epoch);
    if (on_epoch) on_epoch(rec, result.checkpoint);
  }
  return result;
}

// ---------------------------------------------------------------------------

void FinetuneConfig::validate() const {
  if (epochs < 0) throw ConfigError("finetune: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("finetune: batch_size must be >= 1");
  validate_optimizer(optimizer);
  if (augment) augment->validate();
}

nlohmann::json FinetuneConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"optimizer", optimizer.to_json()},
          {"schedule", to_string(schedule)},
          {"augment", augment ? augment->to_json() : nlohmann::json(nullptr)},
          {"freeze_encoder", freeze_encoder}};
}

void load_pretrained_encoder(Classifier& model, const Checkpoint& pretrained) {
  if (pretrained.meta.value("kind", "") != "pretrain" || !pretrained.meta.contains("model")) {
    throw ConfigError("checkpoint is not a pretraining checkpoint");
  }
  const EncoderConfig stored = EncoderConfig::from_json(pretrained.meta["model"].at("encoder"));
  if (!(stored == model.config().encoder)) {
    throw ConfigError("pretrained encoder config does not match the run config: checkpoint has " +
                      stored.to_json().dump() + ", run has " + model.config().encoder.to_json().dump());
  }
  ParameterList enc;
  model.collect_encoder(enc);
  restore_parameters(pretrained, enc, true);
}

TrainResult finetune(Classifier& model, const Checkpoint* pretrained, std::span<const ImageRecord> records,
                     const FinetuneConfig& config, std::uint64_t seed, const Checkpoint* resume,
                     const EpochCallback& on_epoch) {
  config.validate();
  require_uniform_geometry(records);
  const int k = model.config().num_classes;
  for (const ImageRecord& r : records) {
    if (!r.label) throw DataError("record " + r.id + " has no label");
    if (*r.label < 0 || *r.label >= k) {
      throw DataError("record " + r.id + " has label " + std::to_string(*r.label) + " outside [0, " +
                      std::to_string(k) + ")");
    }
  }
  const int n = static_cast<int>(records.size());

  const int start = start_epoch_from(resume, "classifier", seed);
  if (resume) {
    restore_classifier(model, *resume);
  } else if (pretrained) {
    load_pretrained_encoder(model, *pretrained);
  }

  ParameterList trainable;
  if (config.freeze_encoder) {
    model.collect_head(trainable);
  } else {
    model.collect(trainable);
  }
  AdamP opt(config.optimizer);
  if (resume) restore_optimizer(*resume, opt);

  const std::int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::int64_t total_steps = steps_per_epoch * config.epochs;

  auto snapshot = [&](int epoch) {
    Checkpoint ckpt = capture_classifier(model);
    store_optimizer(ckpt, opt);
    ckpt.meta["epoch"] = epoch;
    ckpt.meta["seed"] = seed;
    ckpt.meta["training"] = config.to_json();
    ckpt.meta["pretrained"] = pretrained != nullptr;
    return ckpt;
  };

  TrainResult result;
  result.checkpoint = snapshot(start);
  for (int epoch = start + 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    double loss_sum = 0.0;
    int steps = 0;
    for (const std::vector<int>& batch : epoch_batches(n, config.batch_size, seed, epoch)) {
      const Tensor input = batch_input(records, batch, config.augment, seed, epoch);
      std::vector<int> labels;
      for (int idx : batch) labels.push_back(*records[static_cast<std::size_t>(idx)].label);
      const std::uint64_t step_seed =
          derive_seed(seed, {kDropoutStream, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(steps)});
      double loss = 0.0;
      try {
        Graph g;
        ClassifierPass pass = model.forward(g, input, Mode::kTrain, step_seed, config.freeze_encoder);
        Var ce = ops::softmax_cross_entropy(pass.logits, labels);
        loss = ce.value().item();
        g.backward(ce);
        opt.set_lr(scheduled_lr(config.optimizer.lr, config.schedule, opt.step_count(), total_steps));
        opt.step(trainable.params);
      } catch (const NumericalError& e) {
        throw NumericalError("fine-tuning diverged at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(steps + 1) + ": " + e.what());
      }
      result.step_losses.push_back(loss);
      loss_sum += loss;
      ++steps;
    }
    EpochRecord rec{epoch, loss_sum / steps, steps, elapsed_ms(t0)};
    result.report.push_back(rec);
    result.checkpoint = snapshot(epoch);
    if (on_epoch) on_epoch(rec, result.checkpoint);
  }
  return result;
}

Tensor predict_proba(Classifier& model, std::span<const ImageRecord> records, int batch_size) {
  if (records.empty()) throw DataError("nothing to predict");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  const int n = static_cast<int>(records.size());
  const int k = model.config().num_classes;
  Tensor out({n, k}, 0.0);
  for (int b = 0; b < n; b += batch_size) {
    std::vector<int> idx;
    for (int i = b; i < std::min(n, b + batch_size); ++i) idx.push_back(i);
    Graph g;
    ClassifierPass pass = model.forward(g, batch_pixels(records, idx), Mode::kEval);
    const Tensor probs = softmax_rows(pass.logits.value());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int c = 0; c < k; ++c) out[static_cast<std::size_t>(idx[i]) * k + c] = probs[i * k + c];
  }
  return out;
}

Tensor batch_pixels(std::span<const ImageRecord> records, std::span<const int> indices) {
  std::vector<Tensor> items;
  items.reserve(indices.size());
  for (int idx : indices) items.push_back(records[static_cast<std::size_t>(idx)].pixels);
  return stack(items);
}

Checkpoint capture_autoencoder(MaskedAutoencoder& model) {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "pretrain";
  ckpt.meta["model"] = model.config().to_json();
  ParameterList list;
  model.collect(list);
  store_parameters(ckpt, list);
  return ckpt;
}

Checkpoint capture_classifier(Classifier& model) {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "classifier";
  ckpt.meta["model"] = model.config().to_json();
  ParameterList list;
  model.collect(list);
  store_parameters(ckpt, list);
  return ckpt;
}

void restore_autoencoder(MaskedAutoencoder& model, const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", "") != "pretrain" || !ckpt.meta.contains("model")) {
    throw ConfigError("checkpoint is not a pretraining checkpoint");
  }
  if (!(ModelConfig::from_json(ckpt.meta["model"]) == model.config())) {
    throw ConfigError("checkpoint model config does not match the run config");
  }
  ParameterList list;
  model.collect(list);
  restore_parameters(ckpt, list, true);
}

void restore_classifier(Classifier& model, const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", "") != "classifier" || !ckpt.meta.contains("model")) {
    throw ConfigError("checkpoint is not a classifier checkpoint");
  }
  if (!(ClassifierConfig::from_json(ckpt.meta["model"]) == model.config())) {
    throw ConfigError("checkpoint classifier config does not match the run config");
  }
  ParameterList list;
  model.collect(list);
  restore_parameters(ckpt, list, true);
}

}  // namespace spmim
