#include <doctest.h>

#include <cmath>
#include <fstream>

#include "menet/data.hpp"
#include "menet/errors.hpp"
#include "menet/image_io.hpp"
#include "test_util.hpp"

using namespace menet;

TEST_CASE("zero rain leaves the background unchanged") {
  const Tensor clean = procedural_image(Pattern::kBlobs, 32, 40, 5);
  RainParams p = RainParams::moderate(1);
  p.intensity = 0.0;
  CHECK(synthesize_rain(clean, p).rainy == clean);
  p = RainParams::moderate(1);
  p.density = 0.0;
  CHECK(synthesize_rain(clean, p).rainy == clean);
}

TEST_CASE("rain synthesis is deterministic and additive") {
  const Tensor clean = procedural_image(Pattern::kGradient, 32, 32, 2);
  const RainParams p = RainParams::heavy(7);
  const ImagePair a = synthesize_rain(clean, p, "x");
  const ImagePair b = synthesize_rain(clean, p, "x");
  CHECK(bit_identical(a.rainy, b.rainy));
  CHECK(a.clean == clean);
  CHECK(a.id == "x");
  bool any_rain = false;
  for (std::size_t i = 0; i < clean.numel(); ++i) {
    CHECK(a.rainy[i] >= clean[i]);
    CHECK(a.rainy[i] <= 1.0f);
    any_rain = any_rain || a.rainy[i] > clean[i];
  }
  CHECK(any_rain);
  CHECK_FALSE(bit_identical(synthesize_rain(clean, RainParams::heavy(8)).rainy, a.rainy));
}

TEST_CASE("rain layer is achromatic and non-negative") {
  const Tensor r = rain_layer(24, 24, RainParams::moderate(3));
  const std::size_t plane = 24 * 24;
  for (std::size_t i = 0; i < plane; ++i) {
    CHECK(r[i] >= 0.0f);
    CHECK(r[i] == r[plane + i]);
    CHECK(r[i] == r[2 * plane + i]);
  }
}

TEST_CASE("rain parameter validation") {
  RainParams p;
  p.density = 1.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.length = 0.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.intensity = -0.1;
  CHECK_THROWS_AS(rain_layer(8, 8, p), ConfigError);
  std::size_t size = 0;
  const auto k = line_kernel(5.0, 0.0, size);
  CHECK(size % 2 == 1);
  CHECK(k.size() == size * size);
}

TEST_CASE("augmentation gives ten aligned crops") {
  const Tensor clean = procedural_image(Pattern::kCheckerboard, 40, 48, 1);
  const ImagePair pair = synthesize_rain(clean, RainParams::light(2), "p");
  const auto out = augment(pair, 32);
  REQUIRE(out.size() == 10);
  CHECK(out[0].clean == crop_image(clean, 0, 0, 32, 32));
  CHECK(out[1].clean == flip_horizontal(out[0].clean));
  CHECK(out[6].rainy == crop_image(pair.rainy, 8, 16, 32, 32));
  CHECK(out[8].clean == crop_image(clean, 4, 8, 32, 32));
  for (const auto& item : out) {
    CHECK(item.clean.shape() == Shape{3, 32, 32});
    CHECK(item.rainy.shape() == Shape{3, 32, 32});
    for (std::size_t i = 0; i < item.clean.numel(); ++i) CHECK(item.rainy[i] >= item.clean[i]);
  }
  CHECK(flip_horizontal(flip_horizontal(clean)) == clean);
  CHECK_THROWS_AS(augment(pair, 30), ConfigError);
  CHECK_THROWS_AS(augment(pair, 44), ConfigError);
}

TEST_CASE("image quantization and roundtrip") {
  CHECK(quantize(0.5f) == 128);
  CHECK(quantize(-1.0f) == 0);
  CHECK(quantize(2.0f) == 255);
  const auto dir = test::scratch_dir("image_io");
  Rng rng(1);
  const Tensor img = test::random_tensor(rng, Shape{3, 5, 7}, 0.0, 1.0);
  write_image(dir / "a.png", img);
  write_image(dir / "a.ppm", img);
  const Tensor png = read_image(dir / "a.png");
  const Tensor ppm = read_image(dir / "a.ppm");
  CHECK(png == ppm);
  REQUIRE(png.shape() == img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(std::abs(png[i] - img[i]) <= 1.0f / 510.0f + 1e-7f);
  const Tensor half(Shape{3, 2, 2}, 0.5f);
  write_image(dir / "half.png", half);
  CHECK(read_image(dir / "half.png")[0] == 128.0f / 255.0f);
  // a second write of the decoded image is lossless
  write_image(dir / "b.png", png);
  CHECK(read_image(dir / "b.png") == png);
}

TEST_CASE("image reading errors") {
  const auto dir = test::scratch_dir("image_err");
  CHECK_THROWS_AS(read_image(dir / "missing.png"), DataError);
  CHECK_THROWS_AS(read_image(dir / "x.bmp"), DataError);
  { std::ofstream(dir / "bad.png") << "not a png"; }
  CHECK_THROWS_AS(read_image(dir / "bad.png"), DataError);
  { std::ofstream(dir / "short.ppm", std::ios::binary) << "P6\n4 4\n255\nabc"; }
  CHECK_THROWS_AS(read_image(dir / "short.ppm"), DataError);
  CHECK(is_image_file("a.PNG") == is_image_file("a.png"));
  CHECK_FALSE(is_image_file("a.txt"));
}

TEST_CASE("corpus loading pairs by stem") {
  const auto dir = test::scratch_dir("corpus");
  Corpus c;
  for (int i = 2; i >= 0; --i) {
    const Tensor clean = procedural_image(Pattern::kBlobs, 16, 16, i);
    c.pairs.push_back(synthesize_rain(clean, RainParams::light(i), "img" + std::to_string(i)));
  }
  save_corpus(dir, c);
  const Corpus loaded = load_corpus(dir);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded.pairs[0].id == "img0");
  CHECK(loaded.pairs[2].id == "img2");
  CHECK(loaded.pairs[0].clean.shape() == Shape{3, 16, 16});

  const auto [train, eval] = loaded.split(1);
  CHECK(train.size() == 2);
  CHECK(eval.pairs[0].id == "img2");
  CHECK_THROWS_AS(loaded.split(4), ConfigError);
}

TEST_CASE("Rain100L style names") {
  CHECK(corpus_stem("rain-12.png") == "12");
  CHECK(corpus_stem("norain-12.png") == "12");
  CHECK(corpus_stem("norain_3.ppm") == "3");
  CHECK(corpus_stem("rainy.png") == "rainy");
  const auto dir = test::scratch_dir("rain100l");
  std::filesystem::create_directories(dir / "rain");
  std::filesystem::create_directories(dir / "norain");
  const Tensor img = procedural_image(Pattern::kGradient, 8, 8, 0);
  write_image(dir / "rain" / "rain-1.png", img);
  write_image(dir / "norain" / "norain-1.png", img);
  const Corpus c = load_corpus(dir);
  REQUIRE(c.size() == 1);
  CHECK(c.pairs[0].id == "1");
}

TEST_CASE("corpus errors") {
  const auto dir = test::scratch_dir("corpus_err");
  CHECK_THROWS_AS(load_corpus(dir), DataError);
  std::filesystem::create_directories(dir / "rain");
  std::filesystem::create_directories(dir / "norain");
  CHECK(load_corpus(dir).empty());
  const Tensor img = procedural_image(Pattern::kGradient, 8, 8, 0);
  write_image(dir / "rain" / "a.png", img);
  CHECK_THROWS_AS(load_corpus(dir), DataError);
  write_image(dir / "norain" / "a.png", procedural_image(Pattern::kGradient, 8, 12, 0));
  CHECK_THROWS_AS(load_corpus(dir), DataError);
}

TEST_CASE("stacking") {
  const Tensor a(Shape{3, 2, 2}, 1.0f), b(Shape{3, 2, 2}, 2.0f), c(Shape{3, 2, 4});
  const Tensor s = stack_images({&a, &b});
  CHECK(s.shape() == Shape{2, 3, 2, 2});
  CHECK(s[12] == 2.0f);
  CHECK_THROWS_AS(stack_images({&a, &c}), ShapeError);
}
