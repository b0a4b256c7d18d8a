#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gcanet/tensor.hpp"

namespace gcanet::io {

/// 8-bit raster, row-major, channels interleaved (1 = gray, 3 = RGB).
struct Image8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;
};

enum class ColorMode {
  kNative,  // gray stays gray, anything with colour becomes RGB; alpha dropped
  kGray,
};

/// Decodes PNG or PGM (P2/P5, maxval 255), chosen by file signature.
/// Throws IoError on unreadable or unsupported files.
Image8 read_image(const std::filesystem::path& path, ColorMode mode = ColorMode::kNative);

/// Encoders are deterministic: equal images give equal bytes.
void write_png(const std::filesystem::path& path, const Image8& image);
/// Binary P5; gray only.
void write_pgm(const std::filesystem::path& path, const Image8& image);

/// Extensions recognised when scanning directories and pairing by basename.
bool is_image_file(const std::filesystem::path& path);
/// Image files of a directory, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// [1,3,H,W] with values v / 255; gray is replicated to three channels.
Tensor<float> to_tensor(const Image8& image);
/// First channel of [1,C,H,W] as an 8-bit gray image, round(255 * clamp(v, 0, 1)).
Image8 to_gray8(const Tensor<float>& map);
/// Three channels of [1,3,H,W] as RGB (a [1,1,H,W] tensor gives gray).
Image8 to_image8(const Tensor<float>& image);

/// [1,1,H,W] of {0, 1}: 1 where the gray value is >= 128.
Tensor<float> binarize_mask(const Image8& mask);

/// Fraction of mask pixels in (32, 224), i.e. neither near 0 nor near 255.
double ambiguous_fraction(const Image8& mask);

struct Pair {
  Tensor<float> image;  // [1,3,H,W] in [0,1]
  Tensor<float> mask;   // [1,1,H,W] of {0,1}
};

/// Throws IoError when a file is unreadable or the two sizes differ.
Pair load_pair(const std::filesystem::path& image_path, const std::filesystem::path& mask_path);

}  // namespace gcanet::io
