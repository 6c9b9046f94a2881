#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "spmim/checkpoint.hpp"
#include "spmim/config.hpp"
#include "spmim/cross_validate.hpp"
#include "spmim/dataset.hpp"
#include "spmim/errors.hpp"
#include "spmim/gradcam.hpp"
#include "spmim/image_io.hpp"
#include "spmim/metrics.hpp"
#include "spmim/quality.hpp"
#include "spmim/rng.hpp"
#include "spmim/training.hpp"

namespace spmim::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kCheckpointFile = "checkpoint.spm";
constexpr const char* kReportFile = "report.jsonl";
constexpr const char* kTimingFile = "timing.jsonl";

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool resume = false;
  std::string pretrained;
  std::string checkpoint;
  std::string manifest;
  std::string image;
  double ratio = 0.6;
  int target_class = 0;
  int layer = 0;
  int size = 224;
  int batch = 1;
  int repeats = 5;
  bool cv = false;
};

RunConfig config_or_default(const Options& o) {
  return o.config.empty() ? parse_run_config("") : load_run_config(o.config);
}

std::uint64_t seed_of(const Options& o, const RunConfig& c) { return o.seed.value_or(c.seed); }

fs::path out_dir_of(const Options& o, const RunConfig& c) { return o.out_dir.empty() ? c.output_dir : fs::path(o.out_dir); }

// A fresh directory, or the existing one when resuming.
void prepare_output(const fs::path& dir, bool resume) {
  if (fs::exists(dir)) {
    if (!resume) throw DataError("output directory " + dir.string() + " exists (use --resume or pick another)");
    return;
  }
  fs::create_directories(dir);
}

std::vector<ImageRecord> load_records(const fs::path& manifest, const RunConfig& c, std::ostream& err) {
  if (manifest.empty()) throw ConfigError("no manifest configured");
  std::vector<ImageRecord> records = load_dataset(manifest, c.image_size);
  if (c.qc_filter) {
    const std::size_t before = records.size();
    std::erase_if(records, [&](const ImageRecord& r) { return !quality_check(r, c.qc).pass; });
    err << "qc: kept " << records.size() << " of " << before << " images\n";
  }
  if (records.empty()) throw DataError("no usable images in " + manifest.string());
  return records;
}

// Report lines up to `epoch` from a previous run, so a resumed run rewrites
// exactly what an uninterrupted one would have.
void truncate_jsonl(const fs::path& path, int epoch) {
  std::vector<std::string> kept;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && nlohmann::json::parse(line).value("epoch", 0) <= epoch) kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const std::string& l : kept) out << l << "\n";
}

EpochCallback epoch_writer(const fs::path& dir, std::ostream& out) {
  return [dir, &out](const EpochRecord& rec, const Checkpoint& ckpt) {
    std::ofstream(dir / kReportFile, std::ios::app) << rec.to_json().dump() << "\n";
    std::ofstream(dir / kTimingFile, std::ios::app)
        << nlohmann::json{{"epoch", rec.epoch}, {"wall_ms", rec.wall_ms}}.dump() << "\n";
    save_checkpoint(dir / kCheckpointFile, ckpt);
    out << "epoch " << rec.epoch << " loss " << std::setprecision(6) << rec.mean_loss << "\n";
  };
}

std::optional<Checkpoint> resume_point(const fs::path& dir, bool resume) {
  if (!resume || !fs::exists(dir / kCheckpointFile)) return std::nullopt;
  Checkpoint ckpt = load_checkpoint(dir / kCheckpointFile);
  const int epoch = ckpt.meta.value("epoch", 0);
  truncate_jsonl(dir / kReportFile, epoch);
  truncate_jsonl(dir / kTimingFile, epoch);
  return ckpt;
}

int cmd_pretrain(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = load_run_config(o.config);
  const std::uint64_t seed = seed_of(o, c);
  const fs::path dir = out_dir_of(o, c);
  const std::vector<ImageRecord> images =
      load_records(c.unlabeled_manifest.empty() ? c.manifest : c.unlabeled_manifest, c, err);
  prepare_output(dir, o.resume);
  const std::optional<Checkpoint> resume = resume_point(dir, o.resume);
  std::ofstream(dir / "config.ini") << render_run_config(c);

  MaskedAutoencoder model(c.model, seed);
  const TrainResult r =
      pretrain(model, images, c.pretrain, seed, resume ? &*resume : nullptr, epoch_writer(dir, out));
  if (r.report.empty()) save_checkpoint(dir / kCheckpointFile, r.checkpoint);
  out << "pretraining checkpoint: " << (dir / kCheckpointFile).string() << "\n";
  return kOk;
}

std::optional<Checkpoint> load_optional(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_checkpoint(path);
}

Tensor probabilities_for(Classifier& model, std::span<const ImageRecord> records, const RunConfig& c) {
  return predict_proba(model, records, c.eval_batch_size);
}

int cmd_finetune(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = load_run_config(o.config);
  const std::uint64_t seed = seed_of(o, c);
  const fs::path dir = out_dir_of(o, c);
  const std::vector<ImageRecord> records = load_records(c.manifest, c, err);
  const std::optional<Checkpoint> pretrained = load_optional(o.pretrained);
  prepare_output(dir, o.resume);
  const std::optional<Checkpoint> resume = resume_point(dir, o.resume);
  std::ofstream(dir / "config.ini") << render_run_config(c);

  const SplitAssignment split =
      holdout_split(static_cast<int>(records.size()), c.holdout_ratio, derive_seed(seed, {kSplitStream}));
  std::vector<ImageRecord> train, val;
  for (int i : split.members(0)) train.push_back(records[static_cast<std::size_t>(i)]);
  for (int i : split.members(1)) val.push_back(records[static_cast<std::size_t>(i)]);

  Classifier model(c.classifier(), seed);
  const TrainResult r = finetune(model, pretrained ? &*pretrained : nullptr, train, c.finetune, seed,
                                 resume ? &*resume : nullptr, epoch_writer(dir, out));
  if (r.report.empty()) save_checkpoint(dir / kCheckpointFile, r.checkpoint);

  if (!val.empty()) {
    const PredictionSet preds = PredictionSet::from_probabilities(probabilities_for(model, val, c), labels_of(val));
    nlohmann::json line = summarize(preds).to_json();
    line["split"] = "validation";
    line["size"] = val.size();
    std::ofstream(dir / "metrics.jsonl") << line.dump() << "\n";
    out << line.dump() << "\n";
  }
  return kOk;
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = config_or_default(o);
  const std::uint64_t seed = seed_of(o, c);
  const fs::path manifest = o.manifest.empty() ? c.manifest : fs::path(o.manifest);
  const std::vector<ImageRecord> records = load_records(manifest, c, err);

  if (!o.cv) {
    if (o.checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint or --cv");
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    Classifier model(ClassifierConfig::from_json(ckpt.meta.at("model")), seed);
    restore_classifier(model, ckpt);
    const PredictionSet preds = PredictionSet::from_probabilities(probabilities_for(model, records, c), labels_of(records));
    nlohmann::json line = summarize(preds).to_json();
    line["size"] = records.size();
    out << line.dump() << "\n";
    return kOk;
  }

  const std::optional<Checkpoint> pretrained = load_optional(o.pretrained);
  const fs::path dir = out_dir_of(o, c);
  prepare_output(dir, false);
  std::ofstream(dir / "config.ini") << render_run_config(c);
  const CrossValidationResult cv = cross_validate(
      records, c.folds, c.num_classes,
      [&](std::span<const ImageRecord> train, std::span<const ImageRecord> test, std::uint64_t fs) {
        Classifier model(c.classifier(), fs);
        finetune(model, pretrained ? &*pretrained : nullptr, train, c.finetune, fs);
        return probabilities_for(model, test, c);
      },
      seed);
  std::ofstream lines(dir / "cv.jsonl");
  const nlohmann::json j = cv.to_json();
  for (const auto& row : j["folds"]) lines << row.dump() << "\n";
  lines << nlohmann::json{{"mean", j["mean"]}, {"std", j["std"]}}.dump() << "\n";
  out << nlohmann::json{{"mean", j["mean"]}, {"std", j["std"]}}.dump() << "\n";
  return kOk;
}

Tensor fit_to_model(const Tensor& pixels, int ratio) {
  const int h = pixels.dim(1) / ratio * ratio, w = pixels.dim(2) / ratio * ratio;
  if (h == 0 || w == 0) throw GeometryError("image is smaller than the downsampling ratio " + std::to_string(ratio));
  return resize_bilinear(pixels, h, w);
}

int cmd_reconstruct(const Options& o, std::ostream& out, std::ostream&) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  MaskedAutoencoder model(ModelConfig::from_json(ckpt.meta.at("model")), 0);
  restore_autoencoder(model, ckpt);
  const int d = model.config().encoder.downsample_ratio();
  const Tensor image = fit_to_model(load_image(o.image).pixels, d);
  const int h = image.dim(1), w = image.dim(2);
  const fs::path dir = o.out_dir.empty() ? fs::path("reconstruction") : fs::path(o.out_dir);
  prepare_output(dir, false);

  const MaskGrid grid = sample_mask(h / d, w / d, o.ratio, derive_seed(o.seed.value_or(0), {kMaskStream}));
  const MaskPyramid pyramid = build_mask_pyramid(grid, h, w);
  const BatchMasks masks = stack_pyramids(std::span<const MaskPyramid>(&pyramid, 1));
  const Tensor batch = image.reshaped({1, 3, h, w});
  Graph g;
  const ReconstructionPass pass = model.forward(g, batch, batch, masks, Mode::kEval);

  const SpatialMask& pix = masks.level(0);
  Tensor panel({3, h, 3 * w}, 0.0);
  const Tensor& recon = pass.recon.value();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = image.at(0, c, y, x);
        panel.at(0, c, y, x) = v;
        panel.at(0, c, y, w + x) = pix.visible(0, y, x) ? v : 0.5;
        panel.at(0, c, y, 2 * w + x) = std::clamp(recon.at(0, c, y, x), 0.0, 1.0);
      }
  save_png(dir / "original_masked_reconstructed.png", panel);
  const nlohmann::json mse = pass.loss.valid() ? nlohmann::json(pass.loss.value().item()) : nlohmann::json(nullptr);
  out << nlohmann::json{{"masked_mse", mse}, {"masked_cells", grid.masked_count()}}.dump() << "\n";
  return kOk;
}

int cmd_gradcam(const Options& o, std::ostream& out, std::ostream&) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  Classifier model(ClassifierConfig::from_json(ckpt.meta.at("model")), 0);
  restore_classifier(model, ckpt);
  const Tensor image = fit_to_model(load_image(o.image).pixels, model.config().encoder.downsample_ratio());
  const fs::path dir = o.out_dir.empty() ? fs::path("gradcam") : fs::path(o.out_dir);
  const Heatmap hm = gradcam(model, image, o.target_class, o.layer);
  prepare_output(dir, false);
  save_heatmap_png(dir / "heatmap.png", hm);
  save_overlay_png(dir / "overlay.png", image, hm);
  out << nlohmann::json{{"layer", hm.layer}, {"target_class", hm.target_class}}.dump() << "\n";
  return kOk;
}

int cmd_qc(const Options& o, std::ostream& out, std::ostream&) {
  const RunConfig c = config_or_default(o);
  const fs::path manifest = o.manifest.empty() ? c.manifest : fs::path(o.manifest);
  for (const ManifestEntry& e : read_manifest(manifest)) {
    nlohmann::json line = quality_check(load_image(e.path), c.qc).to_json();
    line["path"] = e.path.string();
    out << line.dump() << "\n";
  }
  return kOk;
}

double median_ms(const std::function<void()>& fn, int repeats) {
  std::vector<double> times;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

int cmd_bench(const Options& o, std::ostream& out, std::ostream&) {
  const RunConfig c = config_or_default(o);
  if (o.repeats < 1 || o.batch < 1) throw ArgumentError("--repeats and --batch must be >= 1");
  const std::uint64_t seed = seed_of(o, c);
  Encoder encoder(c.model.encoder, seed);
  const int d = c.model.encoder.downsample_ratio();
  if (o.size % d != 0) throw GeometryError("--size must be a multiple of " + std::to_string(d));
  std::mt19937_64 rng(derive_seed(seed, {kInitStream, 99}));
  const Tensor images = Tensor::uniform({o.batch, 3, o.size, o.size}, 0.0, 1.0, rng);

  out << "ratio  dense_ms  sparse_ms  speedup\n";
  for (double ratio : {0.0, 0.3, 0.6, 0.9}) {
    std::vector<MaskPyramid> pyr;
    for (int i = 0; i < o.batch; ++i) {
      pyr.push_back(build_mask_pyramid(
          sample_mask(o.size / d, o.size / d, ratio, derive_seed(seed, {kMaskStream, static_cast<std::uint64_t>(i)})),
          o.size, o.size));
    }
    const BatchMasks masks = stack_pyramids(pyr);
    auto time_path = [&](ExecutionPath path) {
      return median_ms(
          [&] {
            Graph g;
            encoder.forward(g, g.constant(images), &masks, Mode::kEval, path);
          },
          o.repeats);
    };
    time_path(ExecutionPath::kEmulated);  // warm-up
    const double dense = time_path(ExecutionPath::kEmulated);
    const double sparse = time_path(ExecutionPath::kCompact);
    out << std::fixed << std::setprecision(1) << std::setw(5) << ratio << std::setw(10) << dense << std::setw(11)
        << sparse << std::setw(9) << std::setprecision(2) << dense / sparse << "\n";
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse masked-image-modeling pretraining for CNNs", argv.empty() ? "spmim" : argv[0]};
  app.require_subcommand(0, 1);
  Options o;
  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults, "Print every config key with its default and exit");

  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", o.seed, "Master seed (overrides training.seed)"); };
  auto add_out = [&](CLI::App* sub) { sub->add_option("--out", o.out_dir, "Output directory"); };

  CLI::App* pre = app.add_subcommand("pretrain", "Masked-image pretraining of encoder and decoder");
  pre->add_option("--config", o.config, "Run config file")->required();
  add_seed(pre);
  add_out(pre);
  pre->add_flag("--resume", o.resume, "Continue from the output directory's checkpoint");

  CLI::App* ft = app.add_subcommand("finetune", "Supervised fine-tuning with a classification head");
  ft->add_option("--config", o.config, "Run config file")->required();
  ft->add_option("--pretrained", o.pretrained, "Pretraining checkpoint (omit to train from scratch)")
      ;
  add_seed(ft);
  add_out(ft);
  ft->add_flag("--resume", o.resume, "Continue from the output directory's checkpoint");

  CLI::App* ev = app.add_subcommand("evaluate", "Metrics of a classifier checkpoint, or k-fold cross-validation");
  ev->add_option("--config", o.config, "Run config file");
  ev->add_option("--checkpoint", o.checkpoint, "Classifier checkpoint");
  ev->add_option("--manifest", o.manifest, "Labeled manifest (defaults to data.manifest)");
  ev->add_flag("--cv", o.cv, "Run stratified k-fold cross-validation instead");
  ev->add_option("--pretrained", o.pretrained, "Pretraining checkpoint for --cv");
  add_seed(ev);
  add_out(ev);

  CLI::App* rec = app.add_subcommand("reconstruct", "Write original, masked and reconstructed images side by side");
  rec->add_option("--checkpoint", o.checkpoint, "Pretraining checkpoint")->required();
  rec->add_option("--image", o.image, "Input image (PNG or PPM)")->required();
  rec->add_option("--ratio", o.ratio, "Mask ratio")->check(CLI::Range(0.0, 1.0));
  add_seed(rec);
  add_out(rec);

  CLI::App* gc = app.add_subcommand("gradcam", "Grad-CAM heatmap and overlay for one image");
  gc->add_option("--checkpoint", o.checkpoint, "Classifier checkpoint")->required();
  gc->add_option("--image", o.image, "Input image (PNG or PPM)")->required();
  gc->add_option("--class", o.target_class, "Target class")->required();
  gc->add_option("--layer", o.layer, "Encoder scale to tap (default: coarsest)");
  add_out(gc);

  CLI::App* qc = app.add_subcommand("qc", "Quality-control report for every image of a manifest");
  qc->add_option("--manifest", o.manifest, "Manifest to check");
  qc->add_option("--config", o.config, "Run config file (for thresholds)");

  CLI::App* bench = app.add_subcommand("bench", "Time sparse against dense encoder forward passes");
  bench->add_option("--config", o.config, "Run config file (encoder section)");
  bench->add_option("--size", o.size, "Square image size");
  bench->add_option("--batch", o.batch, "Batch size");
  bench->add_option("--repeats", o.repeats, "Timed repetitions (median reported)");
  add_seed(bench);

  try {
    std::vector<std::string> args(argv.size() > 1 ? argv.begin() + 1 : argv.end(), argv.end());
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  }

  try {
    if (print_defaults) {
      out << default_config_reference();
      return kOk;
    }
    if (pre->parsed()) return cmd_pretrain(o, out, err);
    if (ft->parsed()) return cmd_finetune(o, out, err);
    if (ev->parsed()) return cmd_evaluate(o, out, err);
    if (rec->parsed()) return cmd_reconstruct(o, out, err);
    if (gc->parsed()) return cmd_gradcam(o, out, err);
    if (qc->parsed()) return cmd_qc(o, out, err);
    if (bench->parsed()) return cmd_bench(o, out, err);
    err << "error: a subcommand is required\n" << app.help();
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kDataOrConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kDataOrConfig;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed metadata: " << e.what() << "\n";
    return kDataOrConfig;
  }
}

}  // namespace spmim::cli
