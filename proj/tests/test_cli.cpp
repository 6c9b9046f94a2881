#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "json.hpp"
#include "spmim/config.hpp"
#include "spmim/dataset.hpp"
#include "spmim/image_io.hpp"
#include "support.hpp"

namespace spmim {
namespace {

namespace fs = std::filesystem;

struct Invocation {
  int code;
  std::string out;
  std::string err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "spmim");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> lines;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

// Two-class stripe dataset at 16x16 plus a run config for a tiny model.
class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < 12; ++i) {
      const int label = i % 2;
      Tensor img({3, 16, 16}, 0.0);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
          for (int x = 0; x < 16; ++x) {
            const int t = label == 0 ? y : x;
            img[(static_cast<std::size_t>(c) * 16 + y) * 16 + x] = (t / 2 % 2 ? 0.7 : 0.3) + noise(rng);
          }
      const fs::path p = dir / ("img" + std::to_string(i) + ".png");
      save_png(p, img);
      entries.push_back({p, label});
    }
    write_manifest(dir / "train.tsv", entries);
    write_config("");
  }

  void write_config(const std::string& extra) {
    std::ofstream(dir / "run.cfg") << "[encoder]\nstem_channels = 4\nstem_stride = 2\n"
                                      "stages = 4:1:1:1:0,6:2:2:1:0,8:2:2:1:0\nscales = 3\n"
                                      "[decoder]\nchannels = 4,4,4\n"
                                      "[training]\nepochs = 2\nbatch_size = 4\nseed = 11\n"
                                      "[finetune]\nepochs = 2\nbatch_size = 4\nnum_classes = 2\n"
                                      "[data]\nmanifest = train.tsv\nimage_size = 16\n"
                                      "[eval]\nfolds = 2\n"
                                   << extra;
  }

  std::string cfg() const { return (dir / "run.cfg").string(); }
  std::string at(const std::string& name) const { return (dir / name).string(); }

  test::TempDir dir;
};

TEST_F(CliTest, UsageErrorsExitWithOne) {
  const Invocation bad = invoke({"pretrain", "--config", cfg(), "--bogus"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("pretrain"), std::string::npos);
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"pretrain"}).code, 1);  // --config is required
  EXPECT_EQ(invoke({"frobnicate"}).code, 1);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST_F(CliTest, PrintDefaultsIsAParsableConfig) {
  const Invocation r = invoke({"--print-defaults"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(render_run_config(parse_run_config(r.out)), render_run_config(parse_run_config("")));
}

TEST_F(CliTest, DataAndConfigErrorsExitWithTwo) {
  EXPECT_EQ(invoke({"pretrain", "--config", at("absent.cfg")}).code, 2);
  std::ofstream(dir / "broken.cfg") << "[encoder]\nstem_channels = many\n";
  EXPECT_EQ(invoke({"pretrain", "--config", at("broken.cfg")}).code, 2);
  EXPECT_EQ(invoke({"reconstruct", "--checkpoint", at("absent.spm"), "--image", at("img0.png")}).code, 2);
  std::ofstream(dir / "junk.spm") << "not a checkpoint";
  EXPECT_EQ(invoke({"gradcam", "--checkpoint", at("junk.spm"), "--image", at("img0.png"), "--class", "0"}).code, 2);
}

TEST_F(CliTest, PretrainIsDeterministicPerSeed) {
  ASSERT_EQ(invoke({"pretrain", "--config", cfg(), "--seed", "7", "--out", at("a")}).code, 0);
  ASSERT_EQ(invoke({"pretrain", "--config", cfg(), "--seed", "7", "--out", at("b")}).code, 0);
  ASSERT_EQ(invoke({"pretrain", "--config", cfg(), "--seed", "8", "--out", at("c")}).code, 0);
  EXPECT_EQ(slurp(dir / "a/report.jsonl"), slurp(dir / "b/report.jsonl"));
  EXPECT_EQ(slurp(dir / "a/checkpoint.spm"), slurp(dir / "b/checkpoint.spm"));
  EXPECT_NE(slurp(dir / "a/report.jsonl"), slurp(dir / "c/report.jsonl"));

  const std::vector<std::string> report = lines_of(dir / "a/report.jsonl");
  ASSERT_EQ(report.size(), 2u);
  const nlohmann::json first = nlohmann::json::parse(report[0]);
  EXPECT_EQ(first.at("epoch"), 1);
  EXPECT_FALSE(first.contains("wall_ms"));
  EXPECT_EQ(lines_of(dir / "a/timing.jsonl").size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "a/config.ini"));

  EXPECT_EQ(invoke({"pretrain", "--config", cfg(), "--out", at("a")}).code, 2);  // exists, no --resume
}

TEST_F(CliTest, ResumeContinuesToTheConfiguredEpochs) {
  std::string text = slurp(dir / "run.cfg");
  text.replace(text.find("epochs = 2"), 10, "epochs = 1");
  std::ofstream(dir / "short.cfg") << text;
  ASSERT_EQ(invoke({"pretrain", "--config", at("short.cfg"), "--out", at("r")}).code, 0);
  ASSERT_EQ(lines_of(dir / "r/report.jsonl").size(), 1u);
  ASSERT_EQ(invoke({"pretrain", "--config", cfg(), "--out", at("r"), "--resume"}).code, 0);
  const std::vector<std::string> report = lines_of(dir / "r/report.jsonl");
  ASSERT_EQ(report.size(), 2u);
  EXPECT_EQ(nlohmann::json::parse(report[1]).at("epoch"), 2);

  ASSERT_EQ(invoke({"pretrain", "--config", cfg(), "--out", at("full")}).code, 0);
  EXPECT_EQ(lines_of(dir / "full/report.jsonl")[0], report[0]);
}

TEST_F(CliTest, FinetuneEvaluateGradcamReconstruct) {
  ASSERT_EQ(invoke({"pretrain", "--config", cfg(), "--out", at("pre")}).code, 0);
  const Invocation ft =
      invoke({"finetune", "--config", cfg(), "--pretrained", at("pre/checkpoint.spm"), "--out", at("ft")});
  ASSERT_EQ(ft.code, 0) << ft.err;
  const nlohmann::json val = nlohmann::json::parse(lines_of(dir / "ft/metrics.jsonl").at(0));
  EXPECT_EQ(val.at("size"), 2);  // 12 - round(0.8 * 12)
  EXPECT_TRUE(val.contains("accuracy"));

  const Invocation ev = invoke({"evaluate", "--config", cfg(), "--checkpoint", at("ft/checkpoint.spm")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(nlohmann::json::parse(ev.out).at("size"), 12);

  const Invocation cv = invoke({"evaluate", "--config", cfg(), "--cv", "--out", at("cv")});
  ASSERT_EQ(cv.code, 0) << cv.err;
  EXPECT_EQ(lines_of(dir / "cv/cv.jsonl").size(), 3u);

  const Invocation gc = invoke({"gradcam", "--checkpoint", at("ft/checkpoint.spm"), "--image", at("img1.png"),
                                "--class", "1", "--out", at("gc")});
  ASSERT_EQ(gc.code, 0) << gc.err;
  EXPECT_EQ(load_image(dir / "gc/heatmap.png").pixels.dim(1), 16);
  EXPECT_TRUE(fs::exists(dir / "gc/overlay.png"));
  EXPECT_EQ(invoke({"gradcam", "--checkpoint", at("ft/checkpoint.spm"), "--image", at("img1.png"), "--class", "5",
                    "--out", at("gc5")})
                .code,
            2);

  const Invocation rec = invoke({"reconstruct", "--checkpoint", at("pre/checkpoint.spm"), "--image",
                                 at("img0.png"), "--out", at("rec")});
  ASSERT_EQ(rec.code, 0) << rec.err;
  const Tensor panel = load_image(dir / "rec/original_masked_reconstructed.png").pixels;
  EXPECT_EQ(panel.dim(1), 16);
  EXPECT_EQ(panel.dim(2), 48);
  const nlohmann::json info = nlohmann::json::parse(rec.out);
  EXPECT_EQ(info.at("masked_cells"), 2);
  EXPECT_GE(info.at("masked_mse").get<double>(), 0.0);
}

TEST_F(CliTest, QcFlagsADarkImage) {
  save_png(dir / "black.png", Tensor({3, 16, 16}, 0.0));
  std::vector<ManifestEntry> entries{{dir / "img0.png", 0}, {dir / "black.png", 1}};
  write_manifest(dir / "qc.tsv", entries);
  const Invocation r = invoke({"qc", "--manifest", at("qc.tsv")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string l0, l1;
  std::getline(lines, l0);
  std::getline(lines, l1);
  const nlohmann::json good = nlohmann::json::parse(l0), black = nlohmann::json::parse(l1);
  EXPECT_TRUE(good.at("pass").get<bool>()) << l0;
  EXPECT_FALSE(black.at("pass").get<bool>());
  const auto failed = black.at("failed_checks").get<std::vector<std::string>>();
  EXPECT_NE(std::find(failed.begin(), failed.end(), "illumination"), failed.end());
}

TEST_F(CliTest, BenchPrintsOneRowPerRatio) {
  const Invocation r = invoke({"bench", "--config", cfg(), "--size", "16", "--repeats", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  int rows = 0;
  for (std::string l; std::getline(lines, l);) ++rows;
  EXPECT_EQ(rows, 5);
  EXPECT_EQ(invoke({"bench", "--config", cfg(), "--size", "20"}).code, 2);
}

TEST_F(CliTest, DivergenceExitsWithThree) {
  write_config("[optimizer]\nlr = 1e200\nprojection = false\n");
  const Invocation r = invoke({"pretrain", "--config", cfg(), "--out", at("nan")});
  EXPECT_EQ(r.code, 3) << r.err;
}

}  // namespace
}  // namespace spmim
