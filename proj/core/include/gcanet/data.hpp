#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gcanet/image_io.hpp"
#include "gcanet/random.hpp"

namespace gcanet::data {

// ------------------------------------------------------------ augmentation

struct AugmentOptions {
  std::int64_t resize = 256;
  std::int64_t crop = 224;
  bool flips = true;

  /// Throws ConfigError unless 1 <= crop <= resize.
  void validate() const;
};

/// Every random choice of one augmentation, enough to replay it.
struct Transcript {
  std::int64_t resize = 0;
  std::int64_t crop = 0;
  std::int64_t top = 0;
  std::int64_t left = 0;
  bool hflip = false;
  bool vflip = false;

  friend bool operator==(const Transcript&, const Transcript&) = default;
};

struct Augmented {
  Tensor<float> image;
  Tensor<float> mask;
  Transcript transcript;
};

/// Bilinear resize of the image (nearest for the mask) to resize x resize, one
/// crop window shared by both, then horizontal and vertical flips with
/// probability 1/2 each when enabled. Draws, in order: top, left, hflip, vflip.
Augmented augment(const Tensor<float>& image, const Tensor<float>& mask, const AugmentOptions& options, Rng& rng);

/// Applies a recorded transcript to a mask alone.
Tensor<float> replay_on_mask(const Tensor<float>& mask, const Transcript& t);

/// Reverses the column (horizontal) or row (vertical) order of every plane.
Tensor<float> flip(const Tensor<float>& x, bool horizontal);
Tensor<float> crop(const Tensor<float>& x, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w);

// ------------------------------------------------------------ noise

struct Noisy {
  Tensor<float> image;
  std::int64_t corrupted = 0;  // pixel positions, not channel values
};

/// Salt-and-pepper noise: each pixel position is corrupted with probability
/// rho and set to 0 or 1 with equal probability in every channel. Throws
/// ConfigError unless 0 <= rho <= 1.
Noisy salt_pepper(const Tensor<float>& image, double rho, Rng& rng);

// ------------------------------------------------------------ synthetic defects

enum class DefectShape { kDisk, kScratch, kPatch };

std::string shape_name(DefectShape s);

struct SynthOptions {
  std::int64_t size = 96;
  DefectShape shape = DefectShape::kDisk;
  /// Intensity offset of the defect: darker for disks and scratches, brighter
  /// for patches.
  double contrast = 0.35;
};

/// Gray surface texture from three octaves of gradient noise plus a little
/// white noise, with one defect stamped in and its binary mask (0 / 255).
/// Fully determined by (options, seed).
///   disk     radius 0.2..0.3 of the size, centre kept inside the image
///   scratch  segment of length 0.4..0.8 and width 2..4 px, any orientation
///   patch    rotated rectangle with sides 0.15..0.35 of the size
struct SynthPair {
  io::Image8 image;
  io::Image8 mask;
};
SynthPair synthesize(const SynthOptions& options, std::uint64_t seed);

// ------------------------------------------------------------ datasets

struct DatasetSpec {
  std::filesystem::path image_dir;
  std::filesystem::path mask_dir;
  std::filesystem::path split_file;
};

struct SampleFiles {
  std::string name;
  std::filesystem::path image;
  std::filesystem::path mask;
};

/// Names of a split file, one per line; blank lines are ignored.
std::vector<std::string> read_split(const std::filesystem::path& path);
void write_split(const std::filesystem::path& path, const std::vector<std::string>& names);

/// Finds the file of `name` in `dir`: the name itself if it has an image
/// extension, otherwise name.png or name.pgm. Throws IoError when none or
/// several match.
std::filesystem::path find_by_basename(const std::filesystem::path& dir, const std::string& name);

/// Throws IoError on an empty split or an entry that does not resolve to
/// exactly one image and one mask.
std::vector<SampleFiles> resolve(const DatasetSpec& spec);

/// Masks with more than this fraction of pixels in (32, 224) are rejected.
inline constexpr double kMaxAmbiguousMask = 0.01;

/// Loads every pair; throws IoError naming the file on failure.
std::vector<io::Pair> load(const std::vector<SampleFiles>& files);

/// Writes images/, masks/ and split.txt under `root` with `count` synthetic
/// pairs named synth_000, synth_001, ..., cycling disk, scratch, patch.
DatasetSpec write_synthetic_dataset(const std::filesystem::path& root, int count, std::int64_t size,
                                    std::uint64_t seed);

}  // namespace gcanet::data
