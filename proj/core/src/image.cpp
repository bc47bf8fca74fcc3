#include "emd/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace emd {

Image Image::blank(std::size_t height, std::size_t width, std::size_t channels, double value) {
  Image img;
  img.channels = channels;
  img.height = height;
  img.width = width;
  img.pixels.assign(channels * height * width, value);
  return img;
}

std::uint8_t quantize_u8(double value) {
  const double v = std::clamp(value, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(255.0 * v + 0.5));
}

void quantize_in_place(Image& image) {
  for (double& v : image.pixels) v = quantize_u8(v) / 255.0;
}

std::vector<std::uint8_t> encode_netpbm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw NetpbmError("netpbm: only 1- or 3-channel images can be encoded");
  }
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const std::size_t plane = image.height * image.width;
  out.reserve(out.size() + image.pixels.size());
  // PPM interleaves channels per pixel; Image is planar.
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < image.channels; ++c) out.push_back(quantize_u8(image.pixels[c * plane + i]));
  }
  return out;
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000) throw NetpbmError(std::string("netpbm: ") + what + " too large at byte " + std::to_string(start));
      ++pos_;
    }
    if (pos_ == start) throw NetpbmError(std::string("netpbm: expected ") + what + " at byte " + std::to_string(start));
    return v;
  }

  void single_whitespace() {
    if (pos_ >= bytes_.size()) throw NetpbmError("netpbm: truncated header");
    ++pos_;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Image decode_netpbm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw NetpbmError("netpbm: missing P5/P6 magic at byte 0");
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader reader(bytes.subspan(2));
  const std::size_t width = reader.number("width");
  const std::size_t height = reader.number("height");
  const std::size_t maxval = reader.number("maxval");
  if (width == 0 || height == 0) throw NetpbmError("netpbm: zero image extent");
  if (maxval != 255) throw NetpbmError("netpbm: only maxval 255 is supported, got " + std::to_string(maxval));
  reader.single_whitespace();
  const std::size_t offset = 2 + reader.pos();
  const std::size_t plane = width * height;
  const std::size_t needed = plane * channels;
  if (bytes.size() - offset < needed) {
    throw NetpbmError("netpbm: pixel data truncated at byte " + std::to_string(bytes.size()) + ", expected " +
                      std::to_string(offset + needed));
  }
  Image img = Image::blank(height, width, channels);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < channels; ++c) img.pixels[c * plane + i] = bytes[offset + i * channels + c] / 255.0;
  }
  return img;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void write_netpbm(const Image& image, const std::filesystem::path& path) {
  write_file_bytes(path, encode_netpbm(image));
}

Image read_netpbm(const std::filesystem::path& path) {
  try {
    return decode_netpbm(read_file_bytes(path));
  } catch (const NetpbmError& e) {
    throw NetpbmError(path.string() + ": " + e.what());
  }
}

Tensor image_to_tensor(const Image& image) {
  return Tensor::from({1, image.channels, image.height, image.width}, image.pixels);
}

Image tensor_to_image(const Tensor& tensor, std::size_t batch_index) {
  if (tensor.rank() != 4 || batch_index >= tensor.dim(0)) {
    throw ShapeError("tensor_to_image: expected B x C x H x W with batch index " + std::to_string(batch_index) +
                     ", got " + shape_string(tensor.shape()));
  }
  Image img = Image::blank(tensor.dim(2), tensor.dim(3), tensor.dim(1));
  const std::size_t n = img.pixels.size();
  std::copy_n(tensor.data().begin() + static_cast<std::ptrdiff_t>(batch_index * n), n, img.pixels.begin());
  return img;
}

}  // namespace emd
