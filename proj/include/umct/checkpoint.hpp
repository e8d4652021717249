#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "umct/tensor.hpp"

namespace umct {

// On-disk layout, all integers little-endian:
//   magic "UMCTCKPT" (8 bytes), u32 version,
//   u32 header length, header bytes (UTF-8 text, may be empty),
//   u32 entry count, then per entry:
//     u32 name length, name bytes (UTF-8), u32 rank, rank x u64 extents,
//     product(extents) x f32 raster (last axis fastest).
inline constexpr char kCheckpointMagic[8] = {'U', 'M', 'C', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string header;
  std::vector<NamedArray> entries;

  const NamedArray* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// FNV-1a over the encoded bytes; used for reproducibility checks.
std::uint64_t checkpoint_digest(const Checkpoint& ckpt);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace umct
