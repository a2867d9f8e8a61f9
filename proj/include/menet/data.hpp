#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "menet/tensor.hpp"

namespace menet {

/// Rainy image O and its clean background B, both [3,H,W] in [0,1].
struct ImagePair {
  Tensor rainy;
  Tensor clean;
  std::string id;
};

struct RainParams {
  double density = 0.004;   ///< fraction of pixels seeding a streak, [0,1]
  double length = 9.0;      ///< streak length in pixels, >= 1
  double angle_deg = 10.0;  ///< streak angle from vertical
  double intensity = 0.35;  ///< streak brightness, [0,1]
  std::uint64_t seed = 0;

  /// Throws ConfigError when out of range.
  void validate() const;

  static RainParams light(std::uint64_t seed);
  static RainParams moderate(std::uint64_t seed);
  static RainParams heavy(std::uint64_t seed);
};

/// Binary line kernel of the given length and angle, odd-sized square.
std::vector<float> line_kernel(double length, double angle_deg, std::size_t& size);

/// Achromatic rain layer R >= 0 of shape [3,H,W].
Tensor rain_layer(std::size_t height, std::size_t width, const RainParams& params);

/// O = clamp(B + R, 0, 1).
ImagePair synthesize_rain(const Tensor& clean, const RainParams& params,
                          std::string id = {});

enum class Pattern { kGradient, kCheckerboard, kBlobs };

/// Procedural clean test image [3,H,W] in [0,1].
Tensor procedural_image(Pattern pattern, std::size_t height, std::size_t width,
                        std::uint64_t seed);

struct Corpus {
  std::vector<ImagePair> pairs;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
  /// Splits off the last `holdout` pairs as an evaluation set.
  std::pair<Corpus, Corpus> split(std::size_t holdout) const;
};

/// Reads <root>/rain/* and <root>/norain/* and pairs files by shared stem
/// (a leading "rain-"/"norain-" or "rain_"/"norain_" prefix is ignored).
/// Pairs are sorted lexicographically by id.
Corpus load_corpus(const std::filesystem::path& root);

/// Writes <root>/rain/<id>.<ext> and <root>/norain/<id>.<ext>.
void save_corpus(const std::filesystem::path& root, const Corpus& corpus,
                 const std::string& extension = ".png");

/// Matching key for a corpus filename.
std::string corpus_stem(const std::filesystem::path& file);

Tensor crop_image(const Tensor& image, std::size_t top, std::size_t left,
                  std::size_t height, std::size_t width);
Tensor flip_horizontal(const Tensor& image);

/// Four corner crops and the centre crop, each also mirrored: 10 pairs.
/// Rainy and clean images receive identical transforms.
std::vector<ImagePair> augment(const ImagePair& pair, std::size_t crop);

/// Stacks equally-shaped [3,H,W] images into [N,3,H,W].
Tensor stack_images(const std::vector<const Tensor*>& images);

}  // namespace menet
