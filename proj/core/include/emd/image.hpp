#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "emd/tensor.hpp"

namespace emd {

// Planar image with values in [0, 1]; channels is 1 (gray) or 3 (RGB).
struct Image {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  static Image blank(std::size_t height, std::size_t width, std::size_t channels = 1, double value = 1.0);
  std::size_t size() const { return pixels.size(); }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  bool same_shape(const Image& other) const {
    return channels == other.channels && height == other.height && width == other.width;
  }
};

class NetpbmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary PGM (P5) / PPM (P6), maxval 255. Encoding stores round(255 * v).
std::vector<std::uint8_t> encode_netpbm(const Image& image);
Image decode_netpbm(std::span<const std::uint8_t> bytes);
void write_netpbm(const Image& image, const std::filesystem::path& path);
Image read_netpbm(const std::filesystem::path& path);

std::uint8_t quantize_u8(double value);
// Snaps every pixel onto the 8-bit grid the file formats can represent.
void quantize_in_place(Image& image);

// Single-image tensors are 1 x C x H x W.
Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const Tensor& tensor, std::size_t batch_index = 0);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace emd
