#include "gcanet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>

#include "gcanet/error.hpp"
#include "gcanet/ops.hpp"

namespace gcanet::data {
namespace fs = std::filesystem;

// ------------------------------------------------------------ augmentation

void AugmentOptions::validate() const {
  if (crop < 1 || resize < 1) throw ConfigError("resize and crop must be positive");
  if (crop > resize) {
    throw ConfigError("crop (" + std::to_string(crop) + ") must not exceed resize (" + std::to_string(resize) + ")");
  }
}

Tensor<float> flip(const Tensor<float>& x, bool horizontal) {
  const Shape s = x.shape();
  Tensor<float> out(s);
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t h = 0; h < s.h; ++h)
        for (std::int64_t w = 0; w < s.w; ++w)
          out.at(n, c, h, w) = horizontal ? x.at(n, c, h, s.w - 1 - w) : x.at(n, c, s.h - 1 - h, w);
  return out;
}

Tensor<float> crop(const Tensor<float>& x, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w) {
  const Shape s = x.shape();
  if (top < 0 || left < 0 || top + h > s.h || left + w > s.w) {
    throw ShapeError("crop window exceeds " + s.str());
  }
  Tensor<float> out(Shape{s.n, s.c, h, w});
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t r = 0; r < h; ++r)
        std::copy_n(&x.at(n, c, top + r, left), w, &out.at(n, c, r, 0));
  return out;
}

namespace {

Tensor<float> resize_to(const Tensor<float>& x, std::int64_t size, bool nearest) {
  if (x.shape().h == size && x.shape().w == size) return x;
  return nearest ? resize_nearest(x, size, size) : resize_bilinear(x, size, size);
}

Tensor<float> apply(const Tensor<float>& x, const Transcript& t, bool nearest) {
  Tensor<float> y = crop(resize_to(x, t.resize, nearest), t.top, t.left, t.crop, t.crop);
  if (t.hflip) y = flip(y, true);
  if (t.vflip) y = flip(y, false);
  return y;
}

}  // namespace

Augmented augment(const Tensor<float>& image, const Tensor<float>& mask, const AugmentOptions& options, Rng& rng) {
  options.validate();
  if (image.shape().h != mask.shape().h || image.shape().w != mask.shape().w) {
    throw ShapeError("image " + image.shape().str() + " and mask " + mask.shape().str() + " differ in size");
  }
  Transcript t;
  t.resize = options.resize;
  t.crop = options.crop;
  const auto slack = static_cast<std::uint64_t>(options.resize - options.crop + 1);
  t.top = static_cast<std::int64_t>(rng.below(slack));
  t.left = static_cast<std::int64_t>(rng.below(slack));
  if (options.flips) {
    t.hflip = rng.bernoulli(0.5);
    t.vflip = rng.bernoulli(0.5);
  }
  return {apply(image, t, false), apply(mask, t, true), t};
}

Tensor<float> replay_on_mask(const Tensor<float>& mask, const Transcript& t) { return apply(mask, t, true); }

// ------------------------------------------------------------ noise

Noisy salt_pepper(const Tensor<float>& image, double rho, Rng& rng) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("noise rate rho must lie in [0, 1], got " + std::to_string(rho));
  const Shape s = image.shape();
  Noisy out{image, 0};
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t i = 0; i < s.plane(); ++i) {
      if (!rng.bernoulli(rho)) continue;
      const float v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
      for (std::int64_t c = 0; c < s.c; ++c) out.image.plane(n, c)[i] = v;
      ++out.corrupted;
    }
  return out;
}

// ------------------------------------------------------------ synthetic defects

std::string shape_name(DefectShape s) {
  switch (s) {
    case DefectShape::kDisk: return "disk";
    case DefectShape::kScratch: return "scratch";
    case DefectShape::kPatch: return "patch";
  }
  return "?";
}

namespace {

/// Gradient noise on a square lattice with unit-vector gradients.
class GradientNoise {
 public:
  GradientNoise(std::int64_t size, double cell, Rng& rng) : cell_(cell) {
    nodes_ = static_cast<std::int64_t>(std::ceil(static_cast<double>(size) / cell)) + 2;
    grads_.resize(static_cast<std::size_t>(nodes_ * nodes_));
    for (auto& g : grads_) {
      const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      g = {std::cos(a), std::sin(a)};
    }
  }

  double at(double x, double y) const {
    const double gx = x / cell_, gy = y / cell_;
    const auto ix = static_cast<std::int64_t>(gx), iy = static_cast<std::int64_t>(gy);
    const double fx = gx - static_cast<double>(ix), fy = gy - static_cast<double>(iy);
    auto dot = [&](std::int64_t dx, std::int64_t dy) {
      const auto& g = grads_[static_cast<std::size_t>((iy + dy) * nodes_ + ix + dx)];
      return g[0] * (fx - static_cast<double>(dx)) + g[1] * (fy - static_cast<double>(dy));
    };
    auto fade = [](double t) { return t * t * t * (t * (t * 6 - 15) + 10); };
    const double u = fade(fx), v = fade(fy);
    const double top = dot(0, 0) + u * (dot(1, 0) - dot(0, 0));
    const double bottom = dot(0, 1) + u * (dot(1, 1) - dot(0, 1));
    return top + v * (bottom - top);
  }

 private:
  double cell_;
  std::int64_t nodes_ = 0;
  std::vector<std::array<double, 2>> grads_;
};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

SynthPair synthesize(const SynthOptions& options, std::uint64_t seed) {
  const std::int64_t n = options.size;
  if (n < 16) throw ConfigError("synthetic images must be at least 16 pixels");
  Rng rng(seed);
  const auto size = static_cast<double>(n);

  std::vector<GradientNoise> octaves;
  for (double cell : {size / 4.0, size / 8.0, size / 16.0}) octaves.emplace_back(n, std::max(cell, 2.0), rng);

  // Defect geometry in pixel-centre coordinates.
  std::function<bool(double, double)> inside;
  double offset = -options.contrast;
  switch (options.shape) {
    case DefectShape::kDisk: {
      const double r = size * rng.uniform(0.2, 0.3);
      const double cx = rng.uniform(r, size - r), cy = rng.uniform(r, size - r);
      inside = [=](double x, double y) { return (x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r; };
      break;
    }
    case DefectShape::kScratch: {
      const double len = size * rng.uniform(0.4, 0.8), width = rng.uniform(2.0, 4.0);
      const double a = rng.uniform(0.0, std::numbers::pi);
      const double hx = 0.5 * len * std::cos(a), hy = 0.5 * len * std::sin(a);
      const double mx = std::abs(hx) + width, my = std::abs(hy) + width;
      const double cx = rng.uniform(mx, size - mx), cy = rng.uniform(my, size - my);
      inside = [=](double x, double y) {
        const double px = x - (cx - hx), py = y - (cy - hy), dx = 2 * hx, dy = 2 * hy;
        const double t = std::clamp((px * dx + py * dy) / (dx * dx + dy * dy), 0.0, 1.0);
        const double ex = px - t * dx, ey = py - t * dy;
        return ex * ex + ey * ey <= 0.25 * width * width;
      };
      break;
    }
    case DefectShape::kPatch: {
      const double a = 0.5 * size * rng.uniform(0.15, 0.35), b = 0.5 * size * rng.uniform(0.15, 0.35);
      const double th = rng.uniform(0.0, std::numbers::pi), c = std::cos(th), s = std::sin(th);
      const double reach = std::sqrt(a * a + b * b);
      const double cx = rng.uniform(reach, size - reach), cy = rng.uniform(reach, size - reach);
      inside = [=](double x, double y) {
        const double u = (x - cx) * c + (y - cy) * s, v = -(x - cx) * s + (y - cy) * c;
        return std::abs(u) <= a && std::abs(v) <= b;
      };
      offset = options.contrast;
      break;
    }
  }

  SynthPair out;
  out.image = {n, n, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(n * n))};
  out.mask = {n, n, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(n * n))};
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      double tex = 0.0, amp = 1.0;
      for (const auto& o : octaves) {
        tex += amp * o.at(px, py);
        amp *= 0.5;
      }
      double v = 0.55 + 0.25 * tex + 0.03 * rng.normal();
      const bool defect = inside(px, py);
      if (defect) v += offset;
      const auto i = static_cast<std::size_t>(y * n + x);
      out.image.pixels[i] = to_byte(v);
      out.mask.pixels[i] = defect ? 255 : 0;
    }
  return out;
}

// ------------------------------------------------------------ datasets

std::vector<std::string> read_split(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split file '" + path.string() + "'");
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    names.push_back(line.substr(b, e - b + 1));
  }
  return names;
}

void write_split(const fs::path& path, const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& n : names) out << n << '\n';
}

fs::path find_by_basename(const fs::path& dir, const std::string& name) {
  if (io::is_image_file(name)) {
    const fs::path p = dir / name;
    if (!fs::is_regular_file(p)) throw IoError("'" + p.string() + "' does not exist");
    return p;
  }
  std::vector<fs::path> hits;
  for (const char* ext : {".png", ".pgm"}) {
    const fs::path p = dir / (name + ext);
    if (fs::is_regular_file(p)) hits.push_back(p);
  }
  if (hits.empty()) throw IoError("no image named '" + name + "' in '" + dir.string() + "'");
  if (hits.size() > 1) throw IoError("'" + name + "' is ambiguous in '" + dir.string() + "'");
  return hits.front();
}

std::vector<SampleFiles> resolve(const DatasetSpec& spec) {
  const auto names = read_split(spec.split_file);
  if (names.empty()) throw IoError("split file '" + spec.split_file.string() + "' lists no samples");
  std::vector<SampleFiles> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back({n, find_by_basename(spec.image_dir, n), find_by_basename(spec.mask_dir, n)});
  return out;
}

std::vector<io::Pair> load(const std::vector<SampleFiles>& files) {
  std::vector<io::Pair> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    const double amb = io::ambiguous_fraction(io::read_image(f.mask, io::ColorMode::kGray));
    if (amb > kMaxAmbiguousMask) {
      throw IoError("mask '" + f.mask.string() + "' does not binarize cleanly (" + std::to_string(amb * 100.0) +
                    "% of pixels far from 0 and 255)");
    }
    out.push_back(io::load_pair(f.image, f.mask));
  }
  return out;
}

DatasetSpec write_synthetic_dataset(const fs::path& root, int count, std::int64_t size, std::uint64_t seed) {
  if (count < 1) throw ConfigError("synthetic dataset needs at least one sample");
  DatasetSpec spec{root / "images", root / "masks", root / "split.txt"};
  fs::create_directories(spec.image_dir);
  fs::create_directories(spec.mask_dir);
  std::vector<std::string> names;
  static constexpr DefectShape kCycle[] = {DefectShape::kDisk, DefectShape::kScratch, DefectShape::kPatch};
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03d", i);
    const SynthPair p = synthesize({size, kCycle[i % 3]}, derive_seed(seed, static_cast<std::uint64_t>(i)));
    io::write_png(spec.image_dir / (std::string(name) + ".png"), p.image);
    io::write_png(spec.mask_dir / (std::string(name) + ".png"), p.mask);
    names.emplace_back(name);
  }
  write_split(spec.split_file, names);
  return spec;
}

}  // namespace gcanet::data
