#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "gcanet/checkpoint.hpp"
#include "gcanet/pipeline.hpp"
#include "support.hpp"

using namespace gcanet;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("gcanet_pipeline_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

io::Image8 gray(std::int64_t w, std::int64_t h, std::uint64_t seed) {
  Rng rng(seed);
  io::Image8 img{w, h, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(w * h))};
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

io::Image8 constant(std::int64_t w, std::int64_t h, std::uint8_t v, int channels = 1) {
  return {w, h, channels, std::vector<std::uint8_t>(static_cast<std::size_t>(w * h * channels), v)};
}

io::Image8 disk_mask(std::int64_t n, double cx, double cy, double r) {
  io::Image8 m = constant(n, n, 0);
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r) m.pixels[static_cast<std::size_t>(y * n + x)] = 255;
  return m;
}

std::int64_t foreground(const Tensor<float>& m) {
  std::int64_t n = 0;
  for (float v : m.vec()) n += v > 0.5f;
  return n;
}

model::ModelConfig toy_config(std::int64_t size) {
  model::ModelConfig c;
  c.stage_channels = {4, 8, 12, 16, 20};
  c.stage_blocks = {1, 1, 1, 1, 1};
  c.input_size = size;
  return c;
}

pipeline::TrainConfig toy_train(std::int64_t epochs) {
  pipeline::TrainConfig c;
  c.batch_size = 2;
  c.epochs = epochs;
  c.seed = 5;
  c.resize = 40;
  c.crop = 32;
  c.flips = true;
  return c;
}

std::vector<io::Pair> toy_samples(int n, std::int64_t size) {
  std::vector<io::Pair> out;
  for (int i = 0; i < n; ++i) {
    const auto s = data::synthesize({size, static_cast<data::DefectShape>(i % 3)}, 100 + static_cast<std::uint64_t>(i));
    out.push_back({io::to_tensor(s.image), io::binarize_mask(s.mask)});
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------ image io

TEST_CASE("load_pair scales by 1/255, replicates gray and binarizes masks") {
  TempDir dir;
  io::Image8 img = constant(5, 4, 51);
  img.pixels[3] = 255;
  io::write_png(dir / "img.png", img);
  io::write_png(dir / "full.png", constant(5, 4, 255));
  const auto p = io::load_pair(dir / "img.png", dir / "full.png");
  REQUIRE(p.image.shape() == Shape{1, 3, 4, 5});
  REQUIRE(p.mask.shape() == Shape{1, 1, 4, 5});
  CHECK(std::abs(p.image[0] - 0.2f) < 1e-6);
  for (int c = 0; c < 3; ++c) CHECK(p.image.at(0, c, 0, 3) == 1.0f);
  for (float v : p.mask.vec()) CHECK(v == 1.0f);

  io::Image8 edge = constant(2, 1, 127);
  edge.pixels[1] = 128;
  io::write_png(dir / "edge.png", edge);
  const auto m = io::binarize_mask(io::read_image(dir / "edge.png"));
  CHECK(m[0] == 0.0f);
  CHECK(m[1] == 1.0f);
}

TEST_CASE("PGM and PNG encodings of the same image give identical tensors") {
  TempDir dir;
  const auto img = gray(17, 9, 3);
  io::write_png(dir / "a.png", img);
  io::write_pgm(dir / "a.pgm", img);
  {
    std::ofstream ascii(dir / "b.pgm");
    ascii << "P2\n# comment line\n17 9\n255\n";
    for (auto v : img.pixels) ascii << static_cast<int>(v) << ' ';
  }
  const auto png = io::to_tensor(io::read_image(dir / "a.png"));
  CHECK(testing::bitwise_equal(png, io::to_tensor(io::read_image(dir / "a.pgm"))));
  CHECK(testing::bitwise_equal(png, io::to_tensor(io::read_image(dir / "b.pgm"))));
  CHECK(io::read_image(dir / "a.pgm").pixels == img.pixels);
}

TEST_CASE("RGB PNG keeps its channels and round-trips") {
  TempDir dir;
  io::Image8 rgb{3, 2, 3, {}};
  for (int i = 0; i < 18; ++i) rgb.pixels.push_back(static_cast<std::uint8_t>(i * 14));
  io::write_png(dir / "rgb.png", rgb);
  const auto back = io::read_image(dir / "rgb.png");
  CHECK(back.channels == 3);
  CHECK(back.pixels == rgb.pixels);
  const auto t = io::to_tensor(back);
  CHECK(t.at(0, 1, 0, 0) == 14.0f / 255.0f);
  CHECK(io::to_image8(t).pixels == rgb.pixels);
}

TEST_CASE("PNG encoding is deterministic") {
  TempDir dir;
  const auto img = gray(31, 7, 9);
  io::write_png(dir / "x.png", img);
  io::write_png(dir / "y.png", img);
  CHECK(slurp(dir / "x.png") == slurp(dir / "y.png"));
}

TEST_CASE("image reading errors") {
  TempDir dir;
  CHECK_THROWS_AS(io::read_image(dir / "missing.png"), IoError);
  std::ofstream(dir / "junk.png") << "not an image";
  CHECK_THROWS_AS(io::read_image(dir / "junk.png"), IoError);
  std::ofstream(dir / "short.pgm") << "P5\n4 4\n255\nab";
  CHECK_THROWS_AS(io::read_image(dir / "short.pgm"), IoError);
  std::ofstream(dir / "deep.pgm") << "P2\n1 1\n65535\n7\n";
  CHECK_THROWS_AS(io::read_image(dir / "deep.pgm"), IoError);
  io::write_png(dir / "a.png", gray(4, 4, 1));
  io::write_png(dir / "b.png", gray(4, 5, 1));
  CHECK_THROWS_WITH_AS(io::load_pair(dir / "a.png", dir / "b.png"), doctest::Contains("size mismatch"), IoError);
}

// ------------------------------------------------------------ augmentation

TEST_CASE("crop equal to resize with flips off is the identity") {
  Rng r(1);
  const auto img = testing::random_tensor<float>(Shape{1, 3, 24, 24}, r, 0.0, 1.0);
  const auto mask = io::binarize_mask(disk_mask(24, 10, 12, 6));
  Rng rng(4);
  const auto a = data::augment(img, mask, {24, 24, false}, rng);
  CHECK(a.transcript.top == 0);
  CHECK(a.transcript.left == 0);
  CHECK(testing::bitwise_equal(a.image, img));
  CHECK(testing::bitwise_equal(a.mask, mask));
}

TEST_CASE("the same seed selects the same crop window") {
  Rng r(2);
  const auto img = testing::random_tensor<float>(Shape{1, 3, 30, 20}, r, 0.0, 1.0);
  const auto m = data::crop(io::binarize_mask(disk_mask(30, 10, 15, 8)), 0, 0, 30, 20);
  Rng a(99), b(99);
  const auto x = data::augment(img, m, {64, 48, true}, a);
  const auto y = data::augment(img, m, {64, 48, true}, b);
  CHECK(x.transcript == y.transcript);
  CHECK(testing::bitwise_equal(x.image, y.image));
  CHECK(x.image.shape() == Shape{1, 3, 48, 48});
}

TEST_CASE("flips are bijections on the mask") {
  const auto mask = io::binarize_mask(disk_mask(20, 4, 7, 5));
  for (bool h : {true, false}) {
    const auto f = data::flip(mask, h);
    CHECK(foreground(f) == foreground(mask));
    CHECK(testing::bitwise_equal(data::flip(f, h), mask));
  }
  CHECK(data::flip(mask, true).at(0, 0, 7, 15) == mask.at(0, 0, 7, 4));
}

TEST_CASE("replaying the transcript on the mask alone reproduces the augmented mask") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng shape_rng(seed);
    const std::int64_t n = 8 + static_cast<std::int64_t>(shape_rng.below(24));
    const std::int64_t resize = 4 + static_cast<std::int64_t>(shape_rng.below(40));
    const std::int64_t crop = 1 + static_cast<std::int64_t>(shape_rng.below(static_cast<std::uint64_t>(resize)));
    const auto mask = io::binarize_mask(disk_mask(n, shape_rng.uniform(0, n), shape_rng.uniform(0, n), n / 3.0));
    Tensor<float> img(Shape{1, 3, n, n});
    for (int c = 0; c < 3; ++c) std::copy_n(mask.data(), n * n, img.plane(0, c));
    Rng rng(seed + 1000);
    const auto a = data::augment(img, mask, {resize, crop, true}, rng);
    CHECK(testing::bitwise_equal(data::replay_on_mask(mask, a.transcript), a.mask));
    CHECK(a.mask.shape() == Shape{1, 1, crop, crop});
    if (resize == n) {
      // Bilinear at the source size is exact, so image and mask stay aligned pixel for pixel.
      for (int c = 0; c < 3; ++c) CHECK(std::equal(a.mask.vec().begin(), a.mask.vec().end(), a.image.plane(0, c)));
    }
  }
}

TEST_CASE("augment validates the crop") {
  Rng rng(0);
  const Tensor<float> img(Shape{1, 3, 8, 8}), mask(Shape{1, 1, 8, 8});
  CHECK_THROWS_AS(data::augment(img, mask, {16, 20, false}, rng), ConfigError);
  CHECK_THROWS_AS(data::augment(img, Tensor<float>(Shape{1, 1, 8, 9}), {8, 8, false}, rng), ShapeError);
}

// ------------------------------------------------------------ noise

TEST_CASE("salt and pepper extremes") {
  Rng r(3);
  const auto img = testing::random_tensor<float>(Shape{1, 3, 16, 16}, r, 0.01, 0.99);
  Rng a(1);
  const auto none = data::salt_pepper(img, 0.0, a);
  CHECK(none.corrupted == 0);
  CHECK(testing::bitwise_equal(none.image, img));
  Rng b(1);
  const auto all = data::salt_pepper(img, 1.0, b);
  CHECK(all.corrupted == 256);
  for (float v : all.image.vec()) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("salt and pepper at rho 0.2 corrupts about a fifth of the pixels") {
  Rng r(8);
  const auto img = testing::random_tensor<float>(Shape{1, 3, 256, 256}, r, 0.01, 0.99);
  Rng rng(2024);
  const auto noisy = data::salt_pepper(img, 0.2, rng);
  const double frac = static_cast<double>(noisy.corrupted) / (256.0 * 256.0);
  CHECK(frac >= 0.18);
  CHECK(frac <= 0.22);
  std::int64_t changed = 0, salt = 0;
  for (std::int64_t i = 0; i < 256 * 256; ++i) {
    const float v0 = noisy.image.plane(0, 0)[i];
    if (v0 == img.plane(0, 0)[i]) continue;
    ++changed;
    salt += v0 == 1.0f;
    CHECK(noisy.image.plane(0, 1)[i] == v0);
    CHECK(noisy.image.plane(0, 2)[i] == v0);
  }
  CHECK(changed == noisy.corrupted);
  CHECK(std::abs(static_cast<double>(salt) / static_cast<double>(changed) - 0.5) < 0.02);
}

TEST_CASE("salt and pepper rejects rho outside [0,1]") {
  Rng rng(0);
  const Tensor<float> img(Shape{1, 3, 2, 2});
  CHECK_THROWS_AS(data::salt_pepper(img, -0.01, rng), ConfigError);
  CHECK_THROWS_AS(data::salt_pepper(img, 1.01, rng), ConfigError);
  CHECK_THROWS_AS(data::salt_pepper(img, std::nan(""), rng), ConfigError);
}

// ------------------------------------------------------------ synthetic data

TEST_CASE("synthetic pairs are seeded, binary and contain one defect") {
  for (auto shape : {data::DefectShape::kDisk, data::DefectShape::kScratch, data::DefectShape::kPatch}) {
    CAPTURE(data::shape_name(shape));
    const auto a = data::synthesize({64, shape}, 11);
    const auto b = data::synthesize({64, shape}, 11);
    const auto c = data::synthesize({64, shape}, 12);
    CHECK(a.image.pixels == b.image.pixels);
    CHECK(a.mask.pixels == b.mask.pixels);
    CHECK(a.image.pixels != c.image.pixels);
    double in = 0, out = 0, nin = 0;
    for (std::size_t i = 0; i < a.mask.pixels.size(); ++i) {
      const auto m = a.mask.pixels[i];
      CHECK((m == 0 || m == 255));
      (m ? in : out) += a.image.pixels[i];
      nin += m != 0;
    }
    REQUIRE(nin > 0);
    const double mean_in = in / nin, mean_out = out / (64.0 * 64.0 - nin);
    if (shape == data::DefectShape::kPatch) CHECK(mean_in > mean_out + 40);
    else CHECK(mean_in < mean_out - 40);
  }
}

// ------------------------------------------------------------ datasets

TEST_CASE("synthetic dataset resolves and loads by basename") {
  TempDir dir;
  const auto spec = data::write_synthetic_dataset(dir.path(), 4, 32, 1);
  const auto files = data::resolve(spec);
  REQUIRE(files.size() == 4);
  CHECK(files[2].name == "synth_002");
  CHECK(files[2].image.filename() == "synth_002.png");
  const auto pairs = data::load(files);
  CHECK(pairs[0].image.shape() == Shape{1, 3, 32, 32});
  CHECK(foreground(pairs[0].mask) > 0);
}

TEST_CASE("dataset resolution errors") {
  TempDir dir;
  auto spec = data::write_synthetic_dataset(dir.path(), 2, 32, 1);
  data::write_split(dir / "missing.txt", {"synth_000", "nope"});
  CHECK_THROWS_WITH_AS(data::resolve({spec.image_dir, spec.mask_dir, dir / "missing.txt"}),
                       doctest::Contains("nope"), IoError);
  data::write_split(dir / "empty.txt", {});
  CHECK_THROWS_AS(data::resolve({spec.image_dir, spec.mask_dir, dir / "empty.txt"}), IoError);
  io::write_pgm(spec.image_dir / "synth_001.pgm", gray(32, 32, 1));
  CHECK_THROWS_WITH_AS(data::resolve(spec), doctest::Contains("ambiguous"), IoError);
  CHECK(data::find_by_basename(spec.image_dir, "synth_001.pgm").extension() == ".pgm");

  io::write_png(spec.mask_dir / "soft.png", constant(32, 32, 100));
  io::write_png(spec.image_dir / "soft.png", gray(32, 32, 2));
  CHECK_THROWS_WITH_AS(data::load({{"soft", spec.image_dir / "soft.png", spec.mask_dir / "soft.png"}}),
                       doctest::Contains("binarize"), IoError);
}

// ------------------------------------------------------------ configuration

TEST_CASE("config defaults follow the training protocol") {
  const auto c = pipeline::parse_config("");
  CHECK(c.learning_rate == 5e-4);
  CHECK(c.batch_size == 8);
  CHECK(c.resize == 256);
  CHECK(c.crop == 224);
  CHECK(c.optimizer().beta1 == 0.9);
  CHECK(c.optimizer().beta2 == 0.999);
  CHECK(c.optimizer().epsilon == 1e-8);
  CHECK(c.model_config().input_size == 224);
}

TEST_CASE("config parsing") {
  const auto c = pipeline::parse_config(
      "# training\n learning_rate = 1e-3  # faster\nbatch_size=2\nepochs = 3\nseed = 9\nresize = 64\ncrop = 48\n"
      "flips = false\ncheckpoint_every = 1\nvariant = cra\nimage_dir = imgs\nmask_dir = /abs/masks\n",
      "/base");
  CHECK(c.learning_rate == 1e-3);
  CHECK(c.batch_size == 2);
  CHECK(c.epochs == 3);
  CHECK(c.seed == 9);
  CHECK(c.crop == 48);
  CHECK_FALSE(c.flips);
  CHECK(c.variant == model::Variant::kCra);
  CHECK(c.dataset.image_dir == fs::path("/base/imgs"));
  CHECK(c.dataset.mask_dir == fs::path("/abs/masks"));
  const auto again = pipeline::parse_config(pipeline::format_config(c));
  CHECK(pipeline::format_config(again) == pipeline::format_config(c));
}

TEST_CASE("config errors name the line and the problem") {
  CHECK_THROWS_WITH_AS(pipeline::parse_config("seed = 1\nmomentum = 0.9\n"),
                       doctest::Contains("line 2: unknown key 'momentum'"), ConfigError);
  CHECK_THROWS_WITH_AS(pipeline::parse_config("seed = 1\nseed = 2\n"), doctest::Contains("repeats"), ConfigError);
  CHECK_THROWS_WITH_AS(pipeline::parse_config("epochs = ten\n"), doctest::Contains("not a valid number"), ConfigError);
  CHECK_THROWS_WITH_AS(pipeline::parse_config("flips = maybe\n"), doctest::Contains("boolean"), ConfigError);
  CHECK_THROWS_WITH_AS(pipeline::parse_config("variant = huge\n"), doctest::Contains("unknown variant"), ConfigError);
  CHECK_THROWS_WITH_AS(pipeline::parse_config("just words\n"), doctest::Contains("key = value"), ConfigError);
  CHECK_THROWS_WITH_AS(pipeline::parse_config("resize = 128\ncrop = 160\n"), doctest::Contains("must not exceed"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(pipeline::parse_config("resize = 128\ncrop = 100\n"), doctest::Contains("multiple of 16"),
                       ConfigError);
  CHECK_THROWS_AS(pipeline::parse_config("learning_rate = -1\n"), ConfigError);
}

// ------------------------------------------------------------ training

TEST_CASE("zero epochs leave the checkpoint at initialization") {
  TempDir dir;
  auto net = model::GcaNet<float>::build(toy_config(32), 3);
  const auto res = pipeline::train(net, toy_samples(2, 32), toy_train(0), {dir.path(), {}});
  CHECK(res.log.empty());
  const auto fresh = model::GcaNet<float>::build(toy_config(32), 3);
  const auto entries = read_checkpoint(res.final_checkpoint);
  const auto params = fresh.params().all();
  REQUIRE(entries.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(entries[i].name == params[i]->name);
    CHECK(testing::bitwise_equal(entries[i].value, params[i]->value));
  }
  CHECK(slurp(dir / "train_log.csv") == std::string(pipeline::kLogHeader) + "\n");
}

TEST_CASE("two runs with the same seed give identical checkpoints and losses") {
  TempDir a, b;
  const auto samples = toy_samples(3, 40);
  auto cfg = toy_train(2);
  cfg.checkpoint_every = 1;
  auto n1 = model::GcaNet<float>::build(toy_config(32), 3);
  auto n2 = model::GcaNet<float>::build(toy_config(32), 3);
  const auto r1 = pipeline::train(n1, samples, cfg, {a.path(), {}});
  const auto r2 = pipeline::train(n2, samples, cfg, {b.path(), {}});
  REQUIRE(r1.log.size() == 4);  // 2 epochs of 3 samples in batches of 2
  CHECK(r1.log[1].step == 2);
  CHECK(r1.log[2].epoch == 2);
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].total == r2.log[i].total);
    CHECK(r1.log[i].total == doctest::Approx(r1.log[i].bce + r1.log[i].iou + r1.log[i].ssim).epsilon(1e-5));
  }
  CHECK(slurp(r1.final_checkpoint) == slurp(r2.final_checkpoint));
  CHECK(fs::exists(a / "checkpoint_epoch_1.gcnt"));
  CHECK(fs::exists(a / "checkpoint_epoch_2.gcnt"));
  CHECK(slurp(a / "checkpoint_epoch_2.gcnt") == slurp(r1.final_checkpoint));
  CHECK(slurp(a / "checkpoint_epoch_1.gcnt") != slurp(r1.final_checkpoint));

  std::ifstream log(a / "train_log.csv");
  std::string header, row;
  std::getline(log, header);
  CHECK(header == "step,epoch,bce,iou,ssim,total,wall_ms");
  int rows = 0;
  while (std::getline(log, row)) ++rows;
  CHECK(rows == 4);

  const auto cfg_back = pipeline::load_config(a / "config.txt");
  CHECK(pipeline::format_config(cfg_back) == pipeline::format_config(cfg));
}

TEST_CASE("a different seed changes the run") {
  const auto samples = toy_samples(2, 40);
  auto cfg = toy_train(1);
  auto n1 = model::GcaNet<float>::build(toy_config(32), 3);
  auto n2 = model::GcaNet<float>::build(toy_config(32), 3);
  const auto r1 = pipeline::train(n1, samples, cfg);
  cfg.seed = 6;
  const auto r2 = pipeline::train(n2, samples, cfg);
  CHECK(r1.log[0].total != r2.log[0].total);
}

TEST_CASE("a non-finite gradient aborts with the last good parameters") {
  TempDir dir;
  auto samples = toy_samples(3, 32);
  auto cfg = toy_train(1);
  cfg.resize = 32;
  cfg.batch_size = 1;
  // ReLU maps NaN to 0 going forward, so the loss stays finite and the
  // gradient of the first convolution is the first casualty.
  samples[2].image.fill(std::nanf(""));
  auto net = model::GcaNet<float>::build(toy_config(32), 3);
  bool thrown = false;
  try {
    pipeline::train(net, samples, cfg, {dir.path(), {}});
  } catch (const pipeline::TrainingAborted& e) {
    thrown = true;
    CHECK(e.term() == "gradient of stage1.stem.dw");
    CHECK(std::string(e.what()).find("non-finite gradient of stage1.stem.dw") != std::string::npos);
    CHECK(e.checkpoint() == dir / "last_good.gcnt");
    auto check = model::GcaNet<float>::build(toy_config(32), 99);
    const auto params = check.params().all();
    load_parameters<float>(e.checkpoint(), std::span<Parameter<float>* const>(params));
    const auto live = net.params().all();
    for (std::size_t i = 0; i < params.size(); ++i) {
      CHECK(testing::bitwise_equal(params[i]->value, live[i]->value));
      for (float v : live[i]->value.vec()) REQUIRE(std::isfinite(v));
    }
  }
  CHECK(thrown);
}

TEST_CASE("a non-finite loss term is named") {
  auto net = model::GcaNet<float>::build(toy_config(32), 3);
  net.params().find("head.decoder1.b")->value.fill(std::numeric_limits<float>::quiet_NaN());
  auto cfg = toy_train(1);
  cfg.resize = 32;
  try {
    pipeline::train(net, toy_samples(1, 32), cfg);
    FAIL("expected an abort");
  } catch (const pipeline::TrainingAborted& e) {
    CHECK(e.term() == "side1.bce");
    CHECK(e.checkpoint().empty());
  }
}

TEST_CASE("training rejects a mismatched network or an empty dataset") {
  auto net = model::GcaNet<float>::build(toy_config(48), 3);
  CHECK_THROWS_WITH_AS(pipeline::train(net, toy_samples(1, 40), toy_train(1)), doctest::Contains("crop"), ConfigError);
  auto ok = model::GcaNet<float>::build(toy_config(32), 3);
  CHECK_THROWS_AS(pipeline::train(ok, {}, toy_train(1)), ConfigError);
}

// ------------------------------------------------------------ inference and evaluation

TEST_CASE("an untrained zero-head network writes all-128 maps at the source size") {
  TempDir dir;
  io::write_png(dir / "a.png", gray(40, 24, 1));
  io::write_pgm(dir / "b.pgm", gray(32, 32, 2));
  auto net = model::GcaNet<float>::build(toy_config(32), 3);
  net.zero_side_heads();
  const auto rep = pipeline::infer(net, dir.path(), dir / "out");
  REQUIRE(rep.errors.empty());
  REQUIRE(rep.written.size() == 2);
  const auto a = io::read_image(dir / "out" / "a.png");
  const auto b = io::read_image(dir / "out" / "b.png");
  CHECK(a.width == 40);
  CHECK(a.height == 24);
  CHECK(b.width == 32);
  for (auto v : a.pixels) CHECK(v == 128);
  for (auto v : b.pixels) CHECK(v == 128);
}

TEST_CASE("inference is idempotent and collects per-file errors") {
  TempDir dir;
  const auto spec = data::write_synthetic_dataset(dir / "data", 3, 48, 4);
  std::ofstream(spec.image_dir / "broken.png") << "garbage";
  auto net = model::GcaNet<float>::build(toy_config(32), 3);
  const auto r1 = pipeline::infer(net, spec.image_dir, dir / "o1");
  const auto r2 = pipeline::infer(net, spec.image_dir, dir / "o2");
  CHECK(r1.written.size() == 3);
  REQUIRE(r1.errors.size() == 1);
  CHECK(r1.errors[0].file.filename() == "broken.png");
  for (const auto& f : r1.written) {
    CHECK(slurp(f) == slurp(dir / "o2" / f.filename()));
    CHECK(io::read_image(f).width == 48);
  }
  pipeline::infer(net, spec.image_dir, dir / "o1");
  for (const auto& f : r1.written) CHECK(slurp(f) == slurp(dir / "o2" / f.filename()));
}

TEST_CASE("noisy inference equals noise followed by inference") {
  TempDir dir;
  const auto spec = data::write_synthetic_dataset(dir / "data", 2, 32, 4);
  auto net = model::GcaNet<float>::build(toy_config(32), 3);
  const auto noise = pipeline::add_noise(spec.image_dir, dir / "noisy", 0.2, 17);
  REQUIRE(noise.written.size() == 2);
  pipeline::infer(net, dir / "noisy", dir / "a");
  pipeline::infer(net, spec.image_dir, dir / "b", {0.2, 17});
  for (const auto& f : noise.written) CHECK(slurp(dir / "a" / f.filename()) == slurp(dir / "b" / f.filename()));
  CHECK(io::read_image(noise.written[0]).channels == 1);
}

TEST_CASE("evaluating perfect predictions scores mae 0 and 1 elsewhere") {
  TempDir dir;
  const auto spec = data::write_synthetic_dataset(dir / "data", 3, 32, 2);
  const auto rep = pipeline::evaluate_directory(spec.mask_dir, spec.mask_dir, dir / "eval");
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.skipped.empty());
  CHECK(rep.mean.mae == 0.0);
  CHECK(rep.mean.max_f == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.mean.mean_f == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.mean.weighted_f == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rep.mean.s_measure == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rep.mean.e_measure == doctest::Approx(1.0).epsilon(1e-12));

  std::ifstream m(dir / "eval" / "metrics.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(m, l);) lines.push_back(l);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == pipeline::kMetricsHeader);
  CHECK(lines[1].rfind("synth_000,", 0) == 0);
  CHECK(lines[4] == "mean,0,1,1,1,1,1");
  std::ifstream c(dir / "eval" / "curves.csv");
  int n = 0;
  for (std::string l; std::getline(c, l);) ++n;
  CHECK(n == 256);
  CHECK(slurp(dir / "eval" / "skipped.txt").empty());
}

TEST_CASE("evaluation skips unscorable pairs and resizes predictions") {
  TempDir dir;
  const auto spec = data::write_synthetic_dataset(dir / "data", 2, 32, 2);
  fs::create_directories(dir / "pred");
  const auto mask0 = io::read_image(spec.mask_dir / "synth_000.png");
  io::Image8 big{64, 64, 1, {}};
  for (std::int64_t y = 0; y < 64; ++y)
    for (std::int64_t x = 0; x < 64; ++x) big.pixels.push_back(mask0.pixels[static_cast<std::size_t>(y / 2 * 32 + x / 2)]);
  io::write_png(dir / "pred" / "synth_000.png", big);
  io::write_png(spec.mask_dir / "blank.png", constant(32, 32, 0));
  io::write_png(dir / "pred" / "blank.png", constant(32, 32, 0));
  const auto rep = pipeline::evaluate_directory(dir / "pred", spec.mask_dir, dir / "eval");
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.rows[0].name == "synth_000");
  CHECK(rep.rows[0].report.mae < 0.05);
  REQUIRE(rep.skipped.size() == 2);
  std::set<std::string> skipped;
  for (const auto& s : rep.skipped) skipped.insert(s.file.filename().string());
  CHECK(skipped == std::set<std::string>{"blank.png", "synth_001.png"});
  CHECK_THROWS_AS(pipeline::evaluate_directory(dir / "pred", dir / "pred" / "none"), IoError);
}
