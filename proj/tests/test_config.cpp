#include <gtest/gtest.h>

#include <fstream>

#include "spmim/config.hpp"
#include "spmim/errors.hpp"
#include "support.hpp"

namespace spmim {
namespace {

TEST(RunConfig, EmptyTextGivesDefaults) {
  const RunConfig c = parse_run_config("");
  EXPECT_EQ(c.model.encoder, EncoderConfig::default_config());
  EXPECT_EQ(c.model.decoder, DecoderConfig::uniform(5, 32));
  EXPECT_EQ(c.pretrain.mask_ratio, 0.6);
  EXPECT_EQ(c.pretrain.optimizer.lr, 1e-3);
  EXPECT_EQ(c.pretrain.optimizer.weight_decay, 1e-2);
  EXPECT_EQ(c.pretrain.optimizer.delta, 0.1);
  EXPECT_EQ(c.pretrain.optimizer.wd_ratio, 0.1);
  EXPECT_EQ(c.finetune.epochs, 300);
  EXPECT_EQ(c.folds, 5);
  EXPECT_EQ(c.holdout_ratio, 0.8);
  EXPECT_EQ(c.qc.min_blur, 1e-4);
  EXPECT_EQ(c.qc.max_illumination, 0.9);
}

TEST(RunConfig, ReferenceParsesToDefaults) {
  const std::string ref = default_config_reference();
  EXPECT_NE(ref.find("[encoder]"), std::string::npos);
  EXPECT_NE(ref.find("; "), std::string::npos);
  EXPECT_EQ(render_run_config(parse_run_config(ref)), render_run_config(parse_run_config("")));
}

TEST(RunConfig, RenderParseRoundTrip) {
  const std::string text = R"(
[encoder]
stem_channels = 4
stages = 4:1:1:1:0,6:2:2:1:0.1,8:2:2.5:2:0
scales = 3
channel_order = 0,2,1
[decoder]
channels = 4,5,6
normalize_target = true
[masking]
ratio = 0.75
[optimizer]
lr = 0.1
schedule = cosine
projection = false
[training]
epochs = 3
batch_size = 2
seed = 99
augment = true
[finetune]
lr = 0.02
freeze_encoder = true
num_classes = 4
head_dropout = 0.25
[data]
image_size = 32
[eval]
folds = 3
)";
  const RunConfig c = parse_run_config(text);
  EXPECT_EQ(c.model.encoder.stages[2].expansion, 2.5);
  EXPECT_EQ(c.model.encoder.stages[2].repeats, 2);
  EXPECT_EQ(c.model.encoder.channel_order, (std::vector<int>{0, 2, 1}));
  EXPECT_TRUE(c.model.normalize_target);
  EXPECT_EQ(c.pretrain.schedule, LrSchedule::kCosine);
  EXPECT_FALSE(c.pretrain.optimizer.projection);
  EXPECT_EQ(c.finetune.optimizer.lr, 0.02);
  EXPECT_FALSE(c.finetune.optimizer.projection);
  EXPECT_TRUE(c.pretrain.augment.has_value());
  EXPECT_EQ(c.pretrain.augment->out_height, 32);
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.classifier().num_classes, 4);
  EXPECT_EQ(c.classifier().head_dropout, 0.25);

  const std::string rendered = render_run_config(c);
  const RunConfig back = parse_run_config(rendered);
  EXPECT_EQ(render_run_config(back), rendered);
  EXPECT_EQ(back.model, c.model);
}

TEST(RunConfig, UnknownSectionsAndKeysAreRejected) {
  EXPECT_THROW(parse_run_config("[encoder]\nstem_chanels = 4\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[network]\ndepth = 4\n"), ConfigError);
  EXPECT_THROW(parse_run_config("stray = 1\n"), ConfigError);
}

TEST(RunConfig, BadValuesAreRejected) {
  EXPECT_THROW(parse_run_config("[masking]\nratio = lots\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[masking]\nratio = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[training]\nepochs = -1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[optimizer]\nnesterov = maybe\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[optimizer]\nschedule = step\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[encoder]\nstages = 16:2:1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[encoder]\nscales = 4\n"), ConfigError);  // ratio 32 vs 16
  EXPECT_THROW(parse_run_config("[decoder]\nchannels = 8,8\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[data]\nimage_size = 48\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[encoder\nstem_channels = 4\n"), ConfigError);
}

TEST(RunConfig, RelativePathsResolveAgainstTheFile) {
  test::TempDir dir;
  std::ofstream(dir / "run.cfg") << "[data]\nmanifest = sets/train.tsv\n[output]\ndir = out\n";
  const RunConfig c = load_run_config(dir / "run.cfg");
  EXPECT_EQ(c.manifest, dir.path() / "sets/train.tsv");
  EXPECT_EQ(c.output_dir, dir.path() / "out");
  EXPECT_THROW(load_run_config(dir / "absent.cfg"), ConfigError);
}

}  // namespace
}  // namespace spmim
