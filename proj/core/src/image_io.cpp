#include "gcanet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "gcanet/error.hpp"

namespace gcanet::io {
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image8 decode_png(const std::vector<std::uint8_t>& bytes, const fs::path& path, ColorMode mode) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw IoError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  const bool color = mode == ColorMode::kNative && (img.format & PNG_FORMAT_FLAG_COLOR);
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  // Transparent pixels are composited over black.
  const png_color background{0, 0, 0};
  if (!png_image_finish_read(&img, &background, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  return out;
}

class PnmReader {
 public:
  PnmReader(const std::vector<std::uint8_t>& bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

  std::int64_t header_int() {
    skip_space_and_comments();
    std::int64_t v = 0;
    bool any = false;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      any = true;
      if (v > (1LL << 31)) fail("header value too large");
    }
    if (!any) fail("malformed header");
    return v;
  }

  void skip_single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("malformed header");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& why) const {
    throw IoError("cannot decode PGM '" + path_.string() + "': " + why);
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  const fs::path& path_;
  std::size_t pos_ = 2;
};

Image8 decode_pgm(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
  const bool binary = bytes[1] == '5';
  PnmReader r(bytes, path);
  const std::int64_t w = r.header_int(), h = r.header_int(), maxval = r.header_int();
  if (w < 1 || h < 1) r.fail("empty image");
  if (maxval < 1 || maxval > 255) r.fail("only 8-bit maxval is supported, got " + std::to_string(maxval));
  Image8 out;
  out.width = w;
  out.height = h;
  out.channels = 1;
  out.pixels.resize(static_cast<std::size_t>(w * h));
  auto rescale = [&](std::int64_t v) {
    if (v > maxval) r.fail("sample exceeds maxval");
    return static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
  };
  if (binary) {
    r.skip_single_space();
    if (bytes.size() - r.pos() < out.pixels.size()) r.fail("truncated pixel data");
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = rescale(bytes[r.pos() + i]);
  } else {
    for (auto& p : out.pixels) p = rescale(r.header_int());
  }
  return out;
}

Image8 to_gray(Image8 img) {
  if (img.channels == 1) return img;
  Image8 out{img.width, img.height, 1, {}};
  out.pixels.resize(static_cast<std::size_t>(img.width * img.height));
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const auto* p = &img.pixels[i * 3];
    out.pixels[i] = static_cast<std::uint8_t>((299 * p[0] + 587 * p[1] + 114 * p[2] + 500) / 1000);
  }
  return out;
}

void check_image(const Image8& image) {
  if (image.width < 1 || image.height < 1) throw IoError("cannot encode an empty image");
  if (image.channels != 1 && image.channels != 3) throw IoError("images must have 1 or 3 channels");
  if (image.pixels.size() != static_cast<std::size_t>(image.width * image.height * image.channels)) {
    throw IoError("pixel buffer does not match the image extent");
  }
}

std::uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(static_cast<double>(c) * 255.0));
}

}  // namespace

Image8 read_image(const fs::path& path, ColorMode mode) {
  const auto bytes = read_bytes(path);
  static constexpr std::array<std::uint8_t, 8> kPngSig{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngSig.begin(), kPngSig.end(), bytes.begin())) {
    return decode_png(bytes, path, mode);
  }
  if (bytes.size() >= 3 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2')) {
    return decode_pgm(bytes, path);
  }
  throw IoError("'" + path.string() + "' is neither PNG nor PGM");
}

void write_png(const fs::path& path, const Image8& image) {
  check_image(image);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

void write_pgm(const fs::path& path, const Image8& image) {
  check_image(image);
  if (image.channels != 1) throw IoError("PGM output requires a gray image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

bool is_image_file(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".pgm";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return out;
}

Tensor<float> to_tensor(const Image8& image) {
  check_image(image);
  const std::int64_t h = image.height, w = image.width;
  Tensor<float> t(Shape{1, 3, h, w});
  for (int c = 0; c < 3; ++c) {
    const int src = image.channels == 3 ? c : 0;
    float* dst = t.plane(0, c);
    for (std::int64_t i = 0; i < h * w; ++i) {
      dst[i] = static_cast<float>(image.pixels[static_cast<std::size_t>(i * image.channels + src)]) / 255.0f;
    }
  }
  return t;
}

Image8 to_gray8(const Tensor<float>& map) {
  const Shape s = map.shape();
  Image8 out{s.w, s.h, 1, {}};
  out.pixels.resize(static_cast<std::size_t>(s.plane()));
  const float* src = map.plane(0, 0);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = quantize(src[i]);
  return out;
}

Image8 to_image8(const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.c == 1) return to_gray8(image);
  if (s.c != 3) throw ShapeError("expected 1 or 3 channels, got " + s.str());
  Image8 out{s.w, s.h, 3, {}};
  out.pixels.resize(static_cast<std::size_t>(s.plane() * 3));
  for (int c = 0; c < 3; ++c) {
    const float* src = image.plane(0, c);
    for (std::int64_t i = 0; i < s.plane(); ++i) out.pixels[static_cast<std::size_t>(i * 3 + c)] = quantize(src[i]);
  }
  return out;
}

Tensor<float> binarize_mask(const Image8& mask) {
  const Image8 g = to_gray(mask);
  Tensor<float> t(Shape{1, 1, g.height, g.width});
  for (std::size_t i = 0; i < g.pixels.size(); ++i) t[i] = g.pixels[i] >= 128 ? 1.0f : 0.0f;
  return t;
}

double ambiguous_fraction(const Image8& mask) {
  const Image8 g = to_gray(mask);
  const auto n = std::count_if(g.pixels.begin(), g.pixels.end(), [](std::uint8_t v) { return v > 32 && v < 224; });
  return static_cast<double>(n) / static_cast<double>(g.pixels.size());
}

Pair load_pair(const fs::path& image_path, const fs::path& mask_path) {
  const Image8 image = read_image(image_path);
  const Image8 mask = read_image(mask_path, ColorMode::kGray);
  if (image.width != mask.width || image.height != mask.height) {
    throw IoError("size mismatch: '" + image_path.string() + "' is " + std::to_string(image.width) + "x" +
                  std::to_string(image.height) + " but '" + mask_path.string() + "' is " +
                  std::to_string(mask.width) + "x" + std::to_string(mask.height));
  }
  return {to_tensor(image), binarize_mask(mask)};
}

}  // namespace gcanet::io
