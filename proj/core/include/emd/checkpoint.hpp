#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "emd/params.hpp"

// Binary tensor archive:
//   "EMD1", u16 version, u32 count,
//   count x { u16 name length, name bytes, u8 rank, u32 extents[rank], f32 values[] }
// All integers and floats little-endian.
namespace emd {

inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Values are narrowed to float32.
std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors);
// Loaded tensors do not require gradients.
NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const NamedTensors& tensors, const std::filesystem::path& path);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace emd
