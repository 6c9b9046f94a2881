#include "spmim/config.hpp"

#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "spmim/errors.hpp"

namespace spmim {
namespace {

namespace pt = boost::property_tree;

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  try {
    return boost::lexical_cast<T>(text);
  } catch (const boost::bad_lexical_cast&) {
    throw ConfigError("config key " + key + ": cannot parse '" + text + "'");
  }
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key " + key + ": expected true or false, got '" + text + "'");
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

template <typename T>
std::string show(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  } else {
    return std::to_string(v);
  }
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<int> parse_ints(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (const std::string& s : split(text, ',')) out.push_back(parse_value<int>(key, s));
  return out;
}

std::string show_stages(const std::vector<StageSpec>& stages) {
  std::string out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& s = stages[i];
    out += (i ? "," : "") + std::to_string(s.out_channels) + ":" + std::to_string(s.stride) + ":" + show(s.expansion) +
           ":" + std::to_string(s.repeats) + ":" + show(s.dropout_p);
  }
  return out;
}

std::vector<StageSpec> parse_stages(const std::string& key, const std::string& text) {
  std::vector<StageSpec> out;
  for (const std::string& item : split(text, ',')) {
    const std::vector<std::string> f = split(item, ':');
    if (f.size() != 5) throw ConfigError("config key " + key + ": stage '" + item + "' is not ch:stride:exp:repeats:dropout");
    out.push_back({parse_value<int>(key, f[0]), parse_value<int>(key, f[1]), parse_value<double>(key, f[2]),
                   parse_value<int>(key, f[3]), parse_value<double>(key, f[4])});
  }
  return out;
}

struct Key {
  std::string section;
  std::string name;
  std::string doc;
  std::function<void(RunConfig&, const std::string&, const std::filesystem::path&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SPMIM_SCALAR(SEC, NAME, TYPE, FIELD, DOC)                                                         \
  Key {                                                                                                  \
    SEC, NAME, DOC,                                                                                      \
        [](RunConfig& c, const std::string& v, const std::filesystem::path&) {                           \
          c.FIELD = parse_value<TYPE>(std::string(SEC) + "." + NAME, v);                                 \
        },                                                                                               \
        [](const RunConfig& c) { return show<TYPE>(c.FIELD); }                                           \
  }

#define SPMIM_PATH(SEC, NAME, FIELD, DOC)                                                                      \
  Key {                                                                                                       \
    SEC, NAME, DOC,                                                                                           \
        [](RunConfig& c, const std::string& v, const std::filesystem::path& base) {                           \
          c.FIELD = v.empty() || std::filesystem::path(v).is_absolute() ? std::filesystem::path(v) : base / v; \
        },                                                                                                    \
        [](const RunConfig& c) { return c.FIELD.string(); }                                                   \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      SPMIM_SCALAR("encoder", "in_channels", int, model.encoder.in_channels, "input image channels"),
      SPMIM_SCALAR("encoder", "stem_channels", int, model.encoder.stem_channels, "width of the stem convolution"),
      SPMIM_SCALAR("encoder", "stem_stride", int, model.encoder.stem_stride, "stride of the stem convolution (1 or 2)"),
      Key{"encoder", "stages", "comma list of out_channels:stride:expansion:repeats:dropout",
          [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
            c.model.encoder.stages = parse_stages("encoder.stages", v);
          },
          [](const RunConfig& c) { return show_stages(c.model.encoder.stages); }},
      Key{"encoder", "channel_order", "permutation of stage widths (empty = identity)",
          [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
            c.model.encoder.channel_order = parse_ints("encoder.channel_order", v);
          },
          [](const RunConfig& c) { return join_ints(c.model.encoder.channel_order); }},
      SPMIM_SCALAR("encoder", "scales", int, model.encoder.scales, "number of 2x reductions (= feature scales)"),
      Key{"decoder", "channels", "widths of D_1..D_L, finest first",
          [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
            c.model.decoder.channels = parse_ints("decoder.channels", v);
          },
          [](const RunConfig& c) { return join_ints(c.model.decoder.channels); }},
      SPMIM_SCALAR("decoder", "embedding_init_std", double, model.embedding_init_std, "init std of the mask embeddings"),
      SPMIM_SCALAR("decoder", "normalize_target", bool, model.normalize_target, "regress per-patch normalized pixels"),
      SPMIM_SCALAR("masking", "ratio", double, pretrain.mask_ratio, "fraction of patches masked"),
      SPMIM_SCALAR("optimizer", "lr", double, pretrain.optimizer.lr, "pretraining learning rate"),
      SPMIM_SCALAR("optimizer", "beta1", double, pretrain.optimizer.beta1, "first-moment decay"),
      SPMIM_SCALAR("optimizer", "beta2", double, pretrain.optimizer.beta2, "second-moment decay"),
      SPMIM_SCALAR("optimizer", "eps", double, pretrain.optimizer.eps, "denominator guard"),
      SPMIM_SCALAR("optimizer", "weight_decay", double, pretrain.optimizer.weight_decay, "decoupled weight decay"),
      SPMIM_SCALAR("optimizer", "delta", double, pretrain.optimizer.delta, "projection threshold"),
      SPMIM_SCALAR("optimizer", "wd_ratio", double, pretrain.optimizer.wd_ratio, "weight decay factor when projecting"),
      SPMIM_SCALAR("optimizer", "nesterov", bool, pretrain.optimizer.nesterov, "Nesterov momentum"),
      SPMIM_SCALAR("optimizer", "projection", bool, pretrain.optimizer.projection, "enable the radial projection"),
      Key{"optimizer", "schedule", "constant or cosine",
          [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
            c.pretrain.schedule = lr_schedule_from_string(v);
          },
          [](const RunConfig& c) { return to_string(c.pretrain.schedule); }},
      SPMIM_SCALAR("training", "epochs", int, pretrain.epochs, "pretraining epochs"),
      SPMIM_SCALAR("training", "batch_size", int, pretrain.batch_size, "pretraining batch size"),
      SPMIM_SCALAR("training", "seed", std::uint64_t, seed, "master seed (overridden by --seed)"),
      Key{"training", "augment", "augment pretraining images",
          [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
            if (parse_value<bool>("training.augment", v)) c.pretrain.augment = AugmentPolicy{};
            else c.pretrain.augment.reset();
          },
          [](const RunConfig& c) { return show(c.pretrain.augment.has_value()); }},
      SPMIM_SCALAR("finetune", "epochs", int, finetune.epochs, "fine-tuning epochs"),
      SPMIM_SCALAR("finetune", "batch_size", int, finetune.batch_size, "fine-tuning batch size"),
      SPMIM_SCALAR("finetune", "lr", double, finetune.optimizer.lr, "fine-tuning learning rate"),
      SPMIM_SCALAR("finetune", "freeze_encoder", bool, finetune.freeze_encoder, "train the head only"),
      SPMIM_SCALAR("finetune", "num_classes", int, num_classes, "number of classes"),
      SPMIM_SCALAR("finetune", "head_dropout", double, head_dropout, "dropout before the classifier"),
      Key{"finetune", "augment", "augment fine-tuning images",
          [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
            if (parse_value<bool>("finetune.augment", v)) c.finetune.augment = AugmentPolicy{};
            else c.finetune.augment.reset();
          },
          [](const RunConfig& c) { return show(c.finetune.augment.has_value()); }},
      SPMIM_PATH("data", "manifest", manifest, "labeled manifest (path<TAB>label per line)"),
      SPMIM_PATH("data", "unlabeled_manifest", unlabeled_manifest, "pretraining manifest"),
      SPMIM_SCALAR("data", "image_size", int, image_size, "square training resolution"),
      SPMIM_SCALAR("data", "qc_filter", bool, qc_filter, "drop images failing quality control"),
      SPMIM_SCALAR("augment", "crop_min", double, augment.crop_scale.lo, "smallest crop side fraction"),
      SPMIM_SCALAR("augment", "crop_max", double, augment.crop_scale.hi, "largest crop side fraction"),
      SPMIM_SCALAR("augment", "hflip_p", double, augment.hflip_p, "horizontal flip probability"),
      SPMIM_SCALAR("augment", "vflip_p", double, augment.vflip_p, "vertical flip probability"),
      SPMIM_SCALAR("augment", "contrast_min", double, augment.contrast.lo, "contrast factor lower bound"),
      SPMIM_SCALAR("augment", "contrast_max", double, augment.contrast.hi, "contrast factor upper bound"),
      SPMIM_SCALAR("augment", "brightness_min", double, augment.brightness.lo, "brightness factor lower bound"),
      SPMIM_SCALAR("augment", "brightness_max", double, augment.brightness.hi, "brightness factor upper bound"),
      SPMIM_SCALAR("augment", "sharpen_min", double, augment.sharpen.lo, "unsharp amount lower bound"),
      SPMIM_SCALAR("augment", "sharpen_max", double, augment.sharpen.hi, "unsharp amount upper bound"),
      SPMIM_SCALAR("qc", "min_blur", double, qc.min_blur, "minimum Laplacian variance"),
      SPMIM_SCALAR("qc", "min_contrast", double, qc.min_contrast, "minimum luminance std"),
      SPMIM_SCALAR("qc", "min_illumination", double, qc.min_illumination, "minimum mean luminance"),
      SPMIM_SCALAR("qc", "max_illumination", double, qc.max_illumination, "maximum mean luminance"),
      SPMIM_SCALAR("qc", "max_artifacts", double, qc.max_artifacts, "maximum saturated fraction"),
      SPMIM_SCALAR("eval", "folds", int, folds, "cross-validation folds"),
      SPMIM_SCALAR("eval", "holdout_ratio", double, holdout_ratio, "train fraction of the holdout split"),
      SPMIM_SCALAR("eval", "batch_size", int, eval_batch_size, "inference batch size"),
      SPMIM_PATH("output", "dir", output_dir, "run output directory"),
  };
  return table;
}

#undef SPMIM_SCALAR
#undef SPMIM_PATH

std::string render(const RunConfig& c, bool with_docs) {
  std::string out;
  std::string section;
  for (const Key& k : keys()) {
    if (k.section != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + k.section + "]\n";
      section = k.section;
    }
    if (with_docs) out += "; " + k.doc + "\n";
    out += k.name + " = " + k.get(c) + "\n";
  }
  return out;
}

RunConfig default_run_config() {
  RunConfig c;
  c.model.decoder = DecoderConfig::uniform(c.model.encoder.scales, 32);
  return c;
}

}  // namespace

ClassifierConfig RunConfig::classifier() const {
  ClassifierConfig c;
  c.encoder = model.encoder;
  c.num_classes = num_classes;
  c.head_dropout = head_dropout;
  return c;
}

void RunConfig::validate() const {
  model.validate();
  pretrain.validate();
  finetune.validate();
  classifier().validate();
  augment.validate();
  if (image_size < 1 || image_size % model.encoder.downsample_ratio() != 0) {
    throw ConfigError("data.image_size must be a positive multiple of " +
                      std::to_string(model.encoder.downsample_ratio()));
  }
  if (folds < 2) throw ConfigError("eval.folds must be >= 2");
  if (!(holdout_ratio > 0.0 && holdout_ratio < 1.0)) throw ConfigError("eval.holdout_ratio must lie in (0, 1)");
  if (eval_batch_size < 1) throw ConfigError("eval.batch_size must be >= 1");
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  RunConfig c = default_run_config();
  bool decoder_channels_set = false;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config key '" + section + "' outside a section");
    bool known_section = false;
    for (const Key& k : keys()) known_section |= k.section == section;
    if (!known_section) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [name, value] : body) {
      const Key* key = nullptr;
      for (const Key& k : keys())
        if (k.section == section && k.name == name) key = &k;
      if (!key) throw ConfigError("unknown config key " + section + "." + name);
      key->set(c, value.data(), base_dir);
      decoder_channels_set |= section == "decoder" && name == "channels";
    }
  }
  if (!decoder_channels_set) c.model.decoder = DecoderConfig::uniform(c.model.encoder.scales, 32);
  // Fine-tuning shares the optimizer section except for its learning rate.
  const double ft_lr = c.finetune.optimizer.lr;
  c.finetune.optimizer = c.pretrain.optimizer;
  c.finetune.optimizer.lr = ft_lr;
  c.finetune.schedule = c.pretrain.schedule;
  if (c.pretrain.augment) {
    c.pretrain.augment = c.augment;
    c.pretrain.augment->out_height = c.pretrain.augment->out_width = c.image_size;
  }
  if (c.finetune.augment) {
    c.finetune.augment = c.augment;
    c.finetune.augment->out_height = c.finetune.augment->out_width = c.image_size;
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path());
}

std::string default_config_reference() { return render(default_run_config(), true); }

std::string render_run_config(const RunConfig& config) { return render(config, false); }

}  // namespace spmim
