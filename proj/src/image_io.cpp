#include "menet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace menet {

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

Tensor from_interleaved(const std::vector<std::uint8_t>& bytes, std::size_t h,
                        std::size_t w, std::size_t stride) {
  Tensor out(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out[(c * h + y) * w + x] =
            static_cast<float>(bytes[(y * w + x) * stride + c]) / 255.0f;
  return out;
}

std::vector<std::uint8_t> to_interleaved(const Tensor& image) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> bytes(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        bytes[(y * w + x) * 3 + c] = quantize(image[(c * h + y) * w + x]);
  return bytes;
}

Tensor read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  const png_uint_32 fmt = img.format;
  if ((fmt & PNG_FORMAT_FLAG_COLOR) == 0 || (fmt & PNG_FORMAT_FLAG_LINEAR) != 0 ||
      (fmt & PNG_FORMAT_FLAG_COLORMAP) != 0) {
    png_image_free(&img);
    throw DataError("unsupported PNG colour type or bit depth in " + path.string() +
                    " (need 8-bit RGB or RGBA)");
  }
  img.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return from_interleaved(buffer, img.height, img.width, 4);
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.dim(2));
  img.height = static_cast<png_uint_32>(image.dim(1));
  img.format = PNG_FORMAT_RGB;
  const std::vector<std::uint8_t> bytes = to_interleaved(image);
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, bytes.data(), 0,
                               nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::istream& in) {
  std::string token;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return token;
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  if (ppm_token(in) != "P6") throw DataError("not a binary P6 PPM: " + path.string());
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(ppm_token(in));
    h = std::stoul(ppm_token(in));
    maxval = std::stoul(ppm_token(in));
  } catch (const std::exception&) {
    throw DataError("malformed PPM header in " + path.string());
  }
  if (maxval != 255) {
    throw DataError("unsupported PPM maxval " + std::to_string(maxval) + " in " +
                    path.string() + " (need 255)");
  }
  if (w == 0 || h == 0) throw DataError("empty PPM image " + path.string());
  std::vector<std::uint8_t> bytes(w * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError("truncated PPM pixel data in " + path.string());
  }
  return from_interleaved(bytes, h, w, 3);
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << image.dim(2) << " " << image.dim(1) << "\n255\n";
  const std::vector<std::uint8_t> bytes = to_interleaved(image);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

std::uint8_t quantize(float value) {
  const float scaled = std::clamp(value, 0.0f, 1.0f) * 255.0f;
  return static_cast<std::uint8_t>(std::round(scaled));
}

bool is_image_file(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  return ext == ".png" || ext == ".ppm";
}

Tensor read_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm") return read_ppm(path);
  throw DataError("unsupported image extension: " + path.string());
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  Tensor img = image;
  if (img.rank() == 4 && img.dim(0) == 1) {
    img = img.reshaped(Shape{img.dim(1), img.dim(2), img.dim(3)});
  }
  if (img.rank() != 3 || img.dim(0) != 3) {
    throw ShapeError("write_image: expected [3,H,W], got " +
                     shape_to_string(image.shape()));
  }
  const std::string ext = lower_extension(path);
  if (ext == ".png") return write_png(path, img);
  if (ext == ".ppm") return write_ppm(path, img);
  throw DataError("unsupported image extension: " + path.string());
}

}  // namespace menet
