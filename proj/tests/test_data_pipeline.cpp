#include <gtest/gtest.h>
#include <png.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "spmim/augment.hpp"
#include "spmim/dataset.hpp"
#include "spmim/errors.hpp"
#include "spmim/image_io.hpp"
#include "spmim/quality.hpp"
#include "support.hpp"

namespace spmim {
namespace {

using test::random_tensor;

Tensor quantized(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor t(shape);
  for (double& v : t.data()) v = static_cast<double>(rng() % 256) / 255.0;
  return t;
}

ImageRecord record_of(Tensor pixels) {
  ImageRecord r;
  r.id = "x";
  r.pixels = std::move(pixels);
  return r;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

TEST(ImageIo, PngRoundTripIsLossless) {
  test::TempDir dir;
  const Tensor rgb = quantized({3, 9, 13}, 1);
  save_png(dir / "a.png", rgb);
  EXPECT_TRUE(bitwise_equal(load_image(dir / "a.png").pixels, rgb));
}

TEST(ImageIo, PpmRoundTripIsLossless) {
  test::TempDir dir;
  const Tensor rgb = quantized({3, 7, 5}, 2);
  save_ppm(dir / "a.ppm", rgb);
  EXPECT_TRUE(bitwise_equal(load_image(dir / "a.ppm").pixels, rgb));
}

TEST(ImageIo, ExtremeLevelsNormalize) {
  test::TempDir dir;
  write_bytes(dir / "p.ppm", std::string("P6\n2 1\n255\n") + std::string("\xff\xff\xff\x00\x00\x00", 6));
  const Tensor px = load_image(dir / "p.ppm").pixels;
  EXPECT_EQ(px.shape(), (Shape{3, 1, 2}));
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(px[static_cast<std::size_t>(c) * 2], 1.0);
    EXPECT_EQ(px[static_cast<std::size_t>(c) * 2 + 1], 0.0);
  }
}

TEST(ImageIo, GrayscaleIsReplicated) {
  test::TempDir dir;
  const Tensor gray = quantized({1, 16, 16}, 3);
  save_png(dir / "g.png", gray);
  save_ppm(dir / "g.pgm", gray);
  for (const char* name : {"g.png", "g.pgm"}) {
    const Tensor px = load_image(dir / name).pixels;
    ASSERT_EQ(px.shape(), (Shape{3, 16, 16}));
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 256; ++i) ASSERT_EQ(px[c * 256 + i], gray[i]);
  }
}

TEST(ImageIo, AsciiPnm) {
  test::TempDir dir;
  write_bytes(dir / "a.pgm", "P2\n# comment\n2 2\n255\n0 51\n102 255\n");
  const Tensor px = load_image(dir / "a.pgm").pixels;
  EXPECT_DOUBLE_EQ(px[1], 0.2);
  EXPECT_EQ(px[3], 1.0);
}

TEST(ImageIo, Errors) {
  test::TempDir dir;
  write_bytes(dir / "x.bmp", "BM not supported");
  EXPECT_THROW(load_image(dir / "x.bmp"), FormatError);
  write_bytes(dir / "t.ppm", std::string("P6\n4 4\n255\n") + std::string(10, '\x10'));
  EXPECT_THROW(load_image(dir / "t.ppm"), DataError);
  write_bytes(dir / "m.ppm", "P6\n4 4\n65535\n");
  EXPECT_THROW(load_image(dir / "m.ppm"), FormatError);
  save_png(dir / "ok.png", quantized({3, 8, 8}, 4));
  std::ifstream in(dir / "ok.png", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  write_bytes(dir / "cut.png", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_image(dir / "cut.png"), DataError);
  EXPECT_THROW(load_image(dir / "absent.png"), DataError);

  // 16-bit PNG
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = 2;
  img.height = 2;
  img.format = PNG_FORMAT_LINEAR_Y;
  const std::uint16_t px[4] = {0, 1000, 20000, 65535};
  ASSERT_TRUE(png_image_write_to_file(&img, (dir / "w.png").c_str(), 0, px, 0, nullptr));
  EXPECT_THROW(load_image(dir / "w.png"), FormatError);
}

TEST(ImageIo, ResizeAndLuminance) {
  const Tensor x = random_tensor({3, 8, 8}, 5, 0.0, 1.0);
  EXPECT_TRUE(bitwise_equal(resize_bilinear(x, 8, 8), x));
  const Tensor flat = Tensor::full({3, 5, 7}, 0.4);
  const Tensor r = resize_bilinear(flat, 11, 3);
  EXPECT_EQ(r.shape(), (Shape{3, 11, 3}));
  for (double v : r.data()) EXPECT_NEAR(v, 0.4, 1e-15);
  Tensor rgb({3, 1, 1});
  rgb[0] = 1.0;
  EXPECT_DOUBLE_EQ(luminance(rgb)[0], 0.299);
}

TEST(Augment, IdentityPolicyIsIdentity) {
  const ImageRecord r = record_of(random_tensor({3, 16, 16}, 6, 0.0, 1.0));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_TRUE(bitwise_equal(augment(r, AugmentPolicy::identity(), seed).pixels, r.pixels));
  }
}

TEST(Augment, ForcedFlipIsAnInvolution) {
  AugmentPolicy p = AugmentPolicy::identity();
  p.hflip_p = 1.0;
  const ImageRecord r = record_of(random_tensor({3, 6, 9}, 7, 0.0, 1.0));
  const ImageRecord once = augment(r, p, 3);
  EXPECT_FALSE(bitwise_equal(once.pixels, r.pixels));
  EXPECT_EQ(once.pixels[2 * 9 + 0], r.pixels[2 * 9 + 8]);
  EXPECT_TRUE(bitwise_equal(augment(once, p, 3).pixels, r.pixels));
  p.hflip_p = 0.0;
  p.vflip_p = 1.0;
  EXPECT_TRUE(bitwise_equal(augment(augment(r, p, 1), p, 2).pixels, r.pixels));
}

TEST(Augment, BrightnessClamps) {
  AugmentDraw d;
  d.brightness = 2.0;
  const Tensor out = apply_augmentation(Tensor::full({3, 2, 2}, 0.75), d, 0, 0);
  for (double v : out.data()) EXPECT_EQ(v, 1.0);
  d.brightness = 0.5;
  const Tensor dim = apply_augmentation(Tensor::full({3, 2, 2}, 0.75), d, 0, 0);
  for (double v : dim.data()) EXPECT_DOUBLE_EQ(v, 0.375);
}

TEST(Augment, CropLargerThanImageIsRejected) {
  AugmentPolicy p;
  p.crop_scale = {0.9, 1.2};
  EXPECT_THROW(augment(record_of(Tensor({3, 4, 4})), p, 1), ArgumentError);
  p = AugmentPolicy{};
  p.contrast = {0.0, 1.0};
  EXPECT_THROW(p.validate(), ArgumentError);
  AugmentDraw d;
  d.crop_scale = 1.5;
  EXPECT_THROW(apply_augmentation(Tensor({3, 4, 4}), d, 0, 0), ArgumentError);
}

TEST(Augment, OutputStaysInRangeAndShape) {
  AugmentPolicy p;
  p.out_height = 24;
  p.out_width = 24;
  p.brightness = {0.3, 3.0};
  p.contrast = {0.3, 3.0};
  p.sharpen = {0.0, 2.0};
  p.crop_scale = {0.3, 1.0};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const ImageRecord r = record_of(random_tensor({3, 32, 32}, seed, 0.0, 1.0));
    const Tensor out = augment(r, p, seed).pixels;
    ASSERT_EQ(out.shape(), (Shape{3, 24, 24}));
    for (double v : out.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(Augment, DeterministicPerSeed) {
  const ImageRecord r = record_of(random_tensor({3, 16, 16}, 8, 0.0, 1.0));
  const AugmentPolicy p;
  EXPECT_TRUE(bitwise_equal(augment(r, p, 5).pixels, augment(r, p, 5).pixels));
  const AugmentDraw d = draw_augmentation(p, 16, 16, 9);
  EXPECT_GE(d.crop_scale, 0.8);
  EXPECT_LE(d.crop_scale, 1.0);
  EXPECT_GE(d.contrast, 0.8);
  EXPECT_LE(d.brightness, 1.25);
  EXPECT_LE(d.sharpen, 0.5);
}

TEST(Quality, AllBlackFailsIllumination) {
  const QualityReport q = quality_check(record_of(Tensor({3, 32, 32}, 0.0)));
  EXPECT_FALSE(q.pass);
  EXPECT_EQ(q.illumination_score, 0.0);
  EXPECT_NE(std::find(q.failed_checks.begin(), q.failed_checks.end(), "illumination"), q.failed_checks.end());
}

TEST(Quality, UniformGrayFailsContrastAndBlur) {
  const QualityReport q = quality_check(record_of(Tensor({3, 32, 32}, 0.5)));
  EXPECT_FALSE(q.pass);
  EXPECT_EQ(q.contrast_score, 0.0);
  EXPECT_EQ(q.blur_score, 0.0);
  const std::set<std::string> failed(q.failed_checks.begin(), q.failed_checks.end());
  EXPECT_TRUE(failed.count("contrast"));
  EXPECT_TRUE(failed.count("blur"));
  EXPECT_FALSE(failed.count("illumination"));
}

TEST(Quality, CheckerboardPassesBlurAndContrast) {
  Tensor board({3, 32, 32});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) board[static_cast<std::size_t>((c * 32 + y) * 32 + x)] = (x + y) % 2 ? 1.0 : 0.0;
  const QualityReport q = quality_check(record_of(board));
  const QualityThresholds t;
  EXPECT_GT(q.blur_score, t.min_blur);
  EXPECT_NEAR(q.contrast_score, 0.5, 1e-12);
  const std::set<std::string> failed(q.failed_checks.begin(), q.failed_checks.end());
  EXPECT_FALSE(failed.count("blur"));
  EXPECT_FALSE(failed.count("contrast"));
}

TEST(Quality, PassIffAllScoresInBounds) {
  std::mt19937_64 rng(10);
  const QualityThresholds t;
  for (int trial = 0; trial < 100; ++trial) {
    const double base = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double spread = std::uniform_real_distribution<double>(0.0, 0.3)(rng);
    Tensor px = Tensor::uniform({3, 16, 16}, base - spread, base + spread, rng);
    for (double& v : px.data()) v = std::clamp(v, 0.0, 1.0);
    const QualityReport q = quality_check(record_of(px));
    const bool expect = q.blur_score >= t.min_blur && q.contrast_score >= t.min_contrast &&
                        q.illumination_score >= t.min_illumination && q.illumination_score <= t.max_illumination &&
                        q.artifact_score <= t.max_artifacts;
    ASSERT_EQ(q.pass, expect);
    ASSERT_EQ(q.pass, q.failed_checks.empty());
    const QualityReport again = quality_check(record_of(px));
    ASSERT_EQ(again.to_json(), q.to_json());
  }
}

TEST(Split, HoldoutEightyTwenty) {
  const SplitAssignment s = holdout_split(100, 0.8, 1);
  EXPECT_EQ(s.members(0).size(), 80u);
  EXPECT_EQ(s.members(1).size(), 20u);
  EXPECT_EQ(s.group, holdout_split(100, 0.8, 1).group);
  EXPECT_NE(s.group, holdout_split(100, 0.8, 2).group);
  EXPECT_THROW(holdout_split(1, 0.8, 1), ArgumentError);
  EXPECT_THROW(holdout_split(10, 1.0, 1), ArgumentError);
}

TEST(Split, BalancedTwoClassFiveFold) {
  std::vector<int> labels(100);
  for (int i = 0; i < 100; ++i) labels[static_cast<std::size_t>(i)] = i % 2;
  const SplitAssignment s = stratified_kfold(labels, 5, 3);
  for (int f = 0; f < 5; ++f) {
    int a = 0, b = 0;
    for (int i : s.members(f)) (labels[static_cast<std::size_t>(i)] ? b : a)++;
    EXPECT_EQ(a, 10);
    EXPECT_EQ(b, 10);
    EXPECT_EQ(s.complement(f).size(), 80u);
  }
}

TEST(Split, KFoldContractErrors) {
  EXPECT_THROW(stratified_kfold({0, 0, 1, 1}, 1, 1), ArgumentError);
  EXPECT_THROW(stratified_kfold({0, 0, 0, 1, 1}, 3, 1), DataError);
}

TEST(Split, RandomDatasetsSatisfyInvariants) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 10 + static_cast<int>(rng() % 200);
    const int classes = 2 + static_cast<int>(rng() % 4);
    const int k = 2 + static_cast<int>(rng() % 4);
    std::vector<int> labels;
    for (int c = 0; c < classes; ++c)
      for (int i = 0; i < k; ++i) labels.push_back(c);
    while (static_cast<int>(labels.size()) < n + classes * k) labels.push_back(static_cast<int>(rng() % classes));
    std::shuffle(labels.begin(), labels.end(), rng);
    const std::uint64_t seed = rng();

    const SplitAssignment h = holdout_split(static_cast<int>(labels.size()), 0.8, seed);
    ASSERT_EQ(h.members(0).size(), static_cast<std::size_t>(std::floor(0.8 * labels.size() + 0.5)));
    ASSERT_EQ(h.members(0).size() + h.members(1).size(), labels.size());

    const SplitAssignment s = stratified_kfold(labels, k, seed);
    ASSERT_EQ(s.group, stratified_kfold(labels, k, seed).group);
    std::map<int, std::vector<int>> per_class;
    std::size_t covered = 0, smallest = labels.size(), largest = 0;
    for (int f = 0; f < k; ++f) {
      const std::vector<int> m = s.members(f);
      covered += m.size();
      smallest = std::min(smallest, m.size());
      largest = std::max(largest, m.size());
      std::map<int, int> counts;
      for (int i : m) counts[labels[static_cast<std::size_t>(i)]]++;
      for (int c = 0; c < classes; ++c) per_class[c].push_back(counts[c]);
    }
    ASSERT_EQ(covered, labels.size());
    for (int g : s.group) ASSERT_TRUE(g >= 0 && g < k);
    ASSERT_LE(largest - smallest, 1u);
    for (auto& [c, counts] : per_class) {
      ASSERT_LE(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()), 1);
    }
  }
}

TEST(Manifest, RoundTripAndLoading) {
  test::TempDir dir;
  save_png(dir / "a.png", quantized({3, 8, 8}, 12));
  save_ppm(dir / "b.ppm", quantized({3, 10, 6}, 13));
  const std::vector<ManifestEntry> entries = {{"a.png", 1}, {"b.ppm", std::nullopt}};
  write_manifest(dir / "m.tsv", entries);
  const std::vector<ManifestEntry> back = read_manifest(dir / "m.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].label, 1);
  EXPECT_FALSE(back[1].label.has_value());

  const std::vector<ImageRecord> recs = load_dataset(dir / "m.tsv", 16);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1].pixels.shape(), (Shape{3, 16, 16}));
  EXPECT_EQ(recs[0].label, 1);
  EXPECT_THROW(labels_of(recs), DataError);

  write_bytes(dir / "bad.tsv", "# header\n\na.png\tnot-a-number\n");
  EXPECT_THROW(read_manifest(dir / "bad.tsv"), DataError);
  EXPECT_THROW(read_manifest(dir / "absent.tsv"), DataError);
}

}  // namespace
}  // namespace spmim
