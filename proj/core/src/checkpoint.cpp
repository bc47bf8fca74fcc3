#include "emd/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "emd/image.hpp"

namespace emd {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'D', '1'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw CheckpointError("checkpoint truncated at byte " + std::to_string(bytes_.size()) + ": " + what +
                            " needs " + std::to_string(n) + " bytes from byte " + std::to_string(pos_));
    }
  }
  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors) {
  if (tensors.size() > UINT32_MAX) throw CheckpointError("too many tensors for a checkpoint");
  Writer w;
  w.bytes(kMagic, 4);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.size() > UINT16_MAX) throw CheckpointError("invalid tensor name length for '" + name + "'");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      if (d > UINT32_MAX) throw CheckpointError("extent too large in '" + name + "'");
      w.u32(static_cast<std::uint32_t>(d));
    }
    for (double v : t.data()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic at byte 0");
  const auto version = r.get(2, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " at byte 4");
  }
  const auto count = r.get(4, "tensor count");
  NamedTensors out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t entry = r.pos();
    const auto len = r.get(2, "name length");
    if (len == 0) throw CheckpointError("empty tensor name at byte " + std::to_string(entry));
    const auto raw = r.take(len, "name");
    std::string name(raw.begin(), raw.end());
    if (out.contains(name)) {
      throw CheckpointError("duplicate tensor name '" + name + "' at byte " + std::to_string(entry));
    }
    const std::size_t rank_pos = r.pos();
    const auto rank = r.get(1, "rank");
    if (rank < 1 || rank > 4) {
      throw CheckpointError("tensor '" + name + "' has invalid rank " + std::to_string(rank) + " at byte " +
                            std::to_string(rank_pos));
    }
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      const std::size_t ext_pos = r.pos();
      const auto e = r.get(4, "extent");
      if (e == 0) {
        throw CheckpointError("tensor '" + name + "' has a zero extent at byte " + std::to_string(ext_pos));
      }
      numel = std::min<std::uint64_t>(numel * e, bytes.size() + 1);
      shape.push_back(static_cast<std::size_t>(e));
    }
    // Checked before allocating: a corrupted extent must not trigger a huge allocation.
    if (numel > r.remaining() / 4) {
      throw CheckpointError("checkpoint truncated at byte " + std::to_string(bytes.size()) + ": tensor '" + name +
                            "' of shape " + shape_string(shape) + " needs more bytes than remain after byte " +
                            std::to_string(r.pos()));
    }
    const auto raw_values = r.take(static_cast<std::size_t>(numel) * 4, "tensor values");
    std::vector<double> values(static_cast<std::size_t>(numel));
    for (std::size_t k = 0; k < values.size(); ++k) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(raw_values[4 * k + static_cast<std::size_t>(b)]) << (8 * b);
      values[k] = static_cast<double>(std::bit_cast<float>(u));
    }
    out.add(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) {
    throw CheckpointError("trailing bytes after the last tensor at byte " + std::to_string(r.pos()));
  }
  return out;
}

void save_checkpoint(const NamedTensors& tensors, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(tensors);
  try {
    write_file_bytes(path, bytes);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace emd
