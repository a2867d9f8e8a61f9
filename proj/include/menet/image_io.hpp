#pragma once

#include <cstdint>
#include <filesystem>

#include "menet/tensor.hpp"

namespace menet {

/// Reads an 8-bit RGB(A) PNG or a binary P6 PPM (maxval 255) chosen by file
/// extension. Returns [3,H,W] with values p/255; alpha is dropped.
Tensor read_image(const std::filesystem::path& path);

/// Writes [3,H,W] or [1,3,H,W] as PNG or PPM by extension. Values are
/// clamped to [0,1] and quantized with round-half-away-from-zero.
void write_image(const std::filesystem::path& path, const Tensor& image);

std::uint8_t quantize(float value);

/// True for extensions read_image understands (.png, .ppm).
bool is_image_file(const std::filesystem::path& path);

}  // namespace menet
