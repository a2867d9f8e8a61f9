#include "menet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>

#include "menet/image_io.hpp"
#include "menet/random.hpp"

namespace menet {

namespace {

void require_image(const Tensor& image, const char* op) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError(std::string(op) + ": expected [3,H,W] image, got " +
                     shape_to_string(image.shape()));
  }
}

std::map<std::string, std::filesystem::path> index_dir(
    const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("missing corpus directory " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, std::filesystem::path> index;
  for (const auto& file : files) {
    const std::string stem = corpus_stem(file);
    if (!index.emplace(stem, file).second) {
      throw DataError("duplicate corpus id '" + stem + "': " + file.string() +
                      " and " + index[stem].string());
    }
  }
  return index;
}

std::array<float, 3> random_colour(Rng& rng) {
  return {static_cast<float>(rng.uniform(0.05, 0.95)),
          static_cast<float>(rng.uniform(0.05, 0.95)),
          static_cast<float>(rng.uniform(0.05, 0.95))};
}

}  // namespace

void RainParams::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(density)) throw ConfigError("rain density must lie in [0,1]");
  if (!in_unit(intensity)) throw ConfigError("rain intensity must lie in [0,1]");
  if (!(length >= 1.0)) throw ConfigError("rain streak length must be >= 1");
  if (!std::isfinite(angle_deg)) throw ConfigError("rain angle must be finite");
}

RainParams RainParams::light(std::uint64_t seed) {
  return RainParams{0.004, 9.0, 10.0, 0.35, seed};
}

RainParams RainParams::moderate(std::uint64_t seed) {
  return RainParams{0.01, 13.0, 15.0, 0.5, seed};
}

RainParams RainParams::heavy(std::uint64_t seed) {
  return RainParams{0.025, 17.0, 20.0, 0.7, seed};
}

std::vector<float> line_kernel(double length, double angle_deg, std::size_t& size) {
  size = static_cast<std::size_t>(std::ceil(length));
  if (size % 2 == 0) ++size;
  std::vector<float> kernel(size * size, 0.0f);
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double dx = std::sin(theta), dy = std::cos(theta);
  const double half = (length - 1.0) / 2.0;
  const auto centre = static_cast<double>(size / 2);
  const int samples = static_cast<int>(std::ceil(length)) * 4 + 1;
  for (int i = 0; i < samples; ++i) {
    const double t = samples == 1 ? 0.0 : -half + 2.0 * half * i / (samples - 1);
    const auto x = static_cast<long>(std::lround(centre + t * dx));
    const auto y = static_cast<long>(std::lround(centre + t * dy));
    if (x >= 0 && y >= 0 && x < static_cast<long>(size) && y < static_cast<long>(size)) {
      kernel[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)] = 1.0f;
    }
  }
  return kernel;
}

Tensor rain_layer(std::size_t height, std::size_t width, const RainParams& params) {
  params.validate();
  Tensor rain(Shape{3, height, width});
  if (params.density == 0.0 || params.intensity == 0.0) return rain;
  std::size_t ksize = 0;
  const std::vector<float> kernel = line_kernel(params.length, params.angle_deg, ksize);
  const auto half = static_cast<long>(ksize / 2);
  std::vector<float> streaks(height * width, 0.0f);
  Rng rng(params.seed);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (rng.uniform() >= params.density) continue;
      for (std::size_t ky = 0; ky < ksize; ++ky) {
        const long yy = static_cast<long>(y + ky) - half;
        if (yy < 0 || yy >= static_cast<long>(height)) continue;
        for (std::size_t kx = 0; kx < ksize; ++kx) {
          const long xx = static_cast<long>(x + kx) - half;
          if (xx < 0 || xx >= static_cast<long>(width)) continue;
          streaks[static_cast<std::size_t>(yy) * width + static_cast<std::size_t>(xx)] +=
              kernel[ky * ksize + kx];
        }
      }
    }
  }
  const auto intensity = static_cast<float>(params.intensity);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < height * width; ++i)
      rain[c * height * width + i] = intensity * streaks[i];
  return rain;
}

ImagePair synthesize_rain(const Tensor& clean, const RainParams& params,
                          std::string id) {
  require_image(clean, "synthesize_rain");
  for (float v : clean.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ConfigError("synthesize_rain: clean image values must lie in [0,1]");
    }
  }
  const Tensor rain = rain_layer(clean.dim(1), clean.dim(2), params);
  Tensor rainy(clean.shape());
  for (std::size_t i = 0; i < clean.numel(); ++i) {
    rainy[i] = std::min(clean[i] + rain[i], 1.0f);
  }
  return ImagePair{std::move(rainy), clean, std::move(id)};
}

Tensor procedural_image(Pattern pattern, std::size_t height, std::size_t width,
                        std::uint64_t seed) {
  Rng rng(seed);
  Tensor image(Shape{3, height, width});
  const std::size_t plane = height * width;
  const auto a = random_colour(rng);
  const auto b = random_colour(rng);
  switch (pattern) {
    case Pattern::kGradient: {
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double ux = std::cos(theta), uy = std::sin(theta);
      const double span = std::abs(ux) * width + std::abs(uy) * height;
      const double lo = std::min(0.0, ux * width) + std::min(0.0, uy * height);
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
          const double t = (ux * x + uy * y - lo) / span;
          for (std::size_t c = 0; c < 3; ++c)
            image[c * plane + y * width + x] =
                static_cast<float>(a[c] + (b[c] - a[c]) * t);
        }
      break;
    }
    case Pattern::kCheckerboard: {
      const std::size_t cell = 4 + rng.below(13);
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
          const bool odd = ((y / cell) + (x / cell)) % 2 == 1;
          for (std::size_t c = 0; c < 3; ++c)
            image[c * plane + y * width + x] = odd ? a[c] : b[c];
        }
      break;
    }
    case Pattern::kBlobs: {
      for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) image[c * plane + i] = 0.5f * a[c];
      const std::size_t count = 3 + rng.below(5);
      const double extent = static_cast<double>(std::min(height, width));
      for (std::size_t k = 0; k < count; ++k) {
        const auto colour = random_colour(rng);
        const double cx = rng.uniform(0.0, width), cy = rng.uniform(0.0, height);
        const double sigma = rng.uniform(0.08, 0.3) * extent;
        for (std::size_t y = 0; y < height; ++y)
          for (std::size_t x = 0; x < width; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const double g = std::exp(-d2 / (2.0 * sigma * sigma));
            for (std::size_t c = 0; c < 3; ++c) {
              float& v = image[c * plane + y * width + x];
              v = static_cast<float>(v + (colour[c] - v) * g);
            }
          }
      }
      break;
    }
  }
  for (float& v : image.data()) v = std::clamp(v, 0.0f, 1.0f);
  return image;
}

std::pair<Corpus, Corpus> Corpus::split(std::size_t holdout) const {
  if (holdout > pairs.size()) {
    throw ConfigError("cannot hold out " + std::to_string(holdout) + " of " +
                      std::to_string(pairs.size()) + " pairs");
  }
  const auto cut = pairs.begin() + static_cast<std::ptrdiff_t>(pairs.size() - holdout);
  return {Corpus{{pairs.begin(), cut}}, Corpus{{cut, pairs.end()}}};
}

std::string corpus_stem(const std::filesystem::path& file) {
  std::string stem = file.stem().string();
  for (const char* prefix : {"norain-", "norain_", "rain-", "rain_"}) {
    const std::string p(prefix);
    if (stem.size() > p.size() && stem.compare(0, p.size(), p) == 0) {
      return stem.substr(p.size());
    }
  }
  return stem;
}

Corpus load_corpus(const std::filesystem::path& root) {
  const auto rainy = index_dir(root / "rain");
  const auto clean = index_dir(root / "norain");
  for (const auto& [stem, path] : rainy) {
    if (!clean.count(stem)) throw DataError("orphan rainy image without clean match: " + path.string());
  }
  for (const auto& [stem, path] : clean) {
    if (!rainy.count(stem)) throw DataError("orphan clean image without rainy match: " + path.string());
  }
  Corpus corpus;
  for (const auto& [stem, path] : rainy) {
    ImagePair pair{read_image(path), read_image(clean.at(stem)), stem};
    if (pair.rainy.shape() != pair.clean.shape()) {
      throw DataError("size mismatch for pair '" + stem + "': " +
                      shape_to_string(pair.rainy.shape()) + " vs " +
                      shape_to_string(pair.clean.shape()));
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

void save_corpus(const std::filesystem::path& root, const Corpus& corpus,
                 const std::string& extension) {
  std::filesystem::create_directories(root / "rain");
  std::filesystem::create_directories(root / "norain");
  for (const ImagePair& pair : corpus.pairs) {
    write_image(root / "rain" / (pair.id + extension), pair.rainy);
    write_image(root / "norain" / (pair.id + extension), pair.clean);
  }
}

Tensor crop_image(const Tensor& image, std::size_t top, std::size_t left,
                  std::size_t height, std::size_t width) {
  require_image(image, "crop_image");
  if (top + height > image.dim(1) || left + width > image.dim(2)) {
    throw ShapeError("crop_image: window exceeds image " +
                     shape_to_string(image.shape()));
  }
  Tensor out(Shape{3, height, width});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        out[(c * height + y) * width + x] =
            image[(c * image.dim(1) + top + y) * image.dim(2) + left + x];
  return out;
}

Tensor flip_horizontal(const Tensor& image) {
  require_image(image, "flip_horizontal");
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out[(c * h + y) * w + x] = image[(c * h + y) * w + (w - 1 - x)];
  return out;
}

std::vector<ImagePair> augment(const ImagePair& pair, std::size_t crop) {
  require_image(pair.clean, "augment");
  if (pair.rainy.shape() != pair.clean.shape()) {
    throw ShapeError("augment: rainy and clean shapes differ");
  }
  const std::size_t h = pair.clean.dim(1), w = pair.clean.dim(2);
  if (crop == 0 || crop % 4 != 0) {
    throw ConfigError("augment: crop size must be a positive multiple of 4, got " +
                      std::to_string(crop));
  }
  if (crop > std::min(h, w)) {
    throw ConfigError("augment: crop " + std::to_string(crop) +
                      " exceeds image size " + std::to_string(h) + "x" +
                      std::to_string(w));
  }
  const std::array<std::pair<std::size_t, std::size_t>, 5> corners{{
      {0, 0}, {0, w - crop}, {h - crop, 0}, {h - crop, w - crop},
      {(h - crop) / 2, (w - crop) / 2}}};
  std::vector<ImagePair> out;
  out.reserve(10);
  for (std::size_t i = 0; i < corners.size(); ++i) {
    const auto [top, left] = corners[i];
    ImagePair cropped{crop_image(pair.rainy, top, left, crop, crop),
                      crop_image(pair.clean, top, left, crop, crop),
                      pair.id + "_c" + std::to_string(i)};
    ImagePair flipped{flip_horizontal(cropped.rainy),
                      flip_horizontal(cropped.clean), cropped.id + "f"};
    out.push_back(std::move(cropped));
    out.push_back(std::move(flipped));
  }
  return out;
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
  if (images.empty()) throw ShapeError("stack_images: no images");
  const Shape shape = images.front()->shape();
  Shape out_shape{images.size()};
  out_shape.insert(out_shape.end(), shape.begin(), shape.end());
  std::vector<float> values;
  values.reserve(shape_numel(out_shape));
  for (const Tensor* img : images) {
    if (img->shape() != shape) {
      throw ShapeError("stack_images: shape " + shape_to_string(img->shape()) +
                       " differs from " + shape_to_string(shape));
    }
    values.insert(values.end(), img->data().begin(), img->data().end());
  }
  return Tensor(std::move(out_shape), std::move(values));
}

}  // namespace menet
