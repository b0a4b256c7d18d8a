#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gcanet/graph.hpp"

namespace gcanet {

// Checkpoint container, all integers little-endian:
//
//   bytes 0..3   magic "GCNT"
//   byte  4      version (1)
//   u32          entry count
//   per entry:   u32 name length, name bytes (UTF-8),
//                u32 n, u32 c, u32 h, u32 w,
//                n*c*h*w IEEE-754 binary32 values in NCHW order
inline constexpr char kCheckpointMagic[4] = {'G', 'C', 'N', 'T'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Tensor<float> value;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Writes parameters in the given order, values narrowed to 32 bits.
template <class T>
void save_parameters(const std::filesystem::path& path, std::span<Parameter<T>* const> params);

/// Loads by name; every parameter must be present with a matching shape.
template <class T>
void load_parameters(const std::filesystem::path& path, std::span<Parameter<T>* const> params);

}  // namespace gcanet
