#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "spmim/model.hpp"
#include "spmim/quality.hpp"
#include "spmim/training.hpp"

namespace spmim {

// Everything a CLI run needs. Loaded from an INI-style file with sections
// [encoder] [decoder] [masking] [optimizer] [training] [finetune] [data]
// [augment] [qc] [eval] [output]; unknown sections or keys are rejected.
struct RunConfig {
  ModelConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  int num_classes = 2;
  double head_dropout = 0.0;
  std::uint64_t seed = 0;

  std::filesystem::path manifest;            // labeled records
  std::filesystem::path unlabeled_manifest;  // pretraining records
  int image_size = 64;
  bool qc_filter = false;
  AugmentPolicy augment;
  QualityThresholds qc;

  int folds = 5;
  double holdout_ratio = 0.8;
  int eval_batch_size = 16;

  std::filesystem::path output_dir = "run";

  ClassifierConfig classifier() const;
  void validate() const;
};

// ConfigError on syntax errors, unknown keys or bad values. Relative paths
// are resolved against the config file's directory.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});

// Every key with its default value and a one-line description, in the
// accepted file format.
std::string default_config_reference();
// The effective configuration in the same format.
std::string render_run_config(const RunConfig& config);

}  // namespace spmim
