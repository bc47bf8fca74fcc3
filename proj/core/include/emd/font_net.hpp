#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "emd/graph.hpp"
#include "emd/ops.hpp"
#include "emd/params.hpp"

namespace emd {

// Shape of the typeface-transfer network. Encoders are a stack of `depth`
// Conv-BN-LeakyReLU blocks (5x5/1 first, 3x3/2 after) ending at 1x1; the
// decoder mirrors them with 3x3/2 deconvolutions and a final 5x5/1 layer.
struct FontNetConfig {
  int image_size = 64;
  int base_channels = 16;
  int refs = 4;
  bool use_skips = true;

  // Spatial extent after each encoder layer; the last entry is 1.
  std::vector<std::size_t> encoder_sizes() const;
  int depth() const { return static_cast<int>(encoder_sizes().size()); }
  // 1, 2, 4, 8, 8, ... times base_channels.
  std::vector<std::size_t> encoder_channels() const;
  // Output channels of up-blocks 1..depth-1 (mirror of the encoder).
  std::vector<std::size_t> decoder_channels() const;
  // R = K = Bc.
  std::size_t code_size() const { return encoder_channels().back(); }

  void validate() const;

  // C=2, 8x8 images, r=2: small enough for finite-difference checks.
  static FontNetConfig micro();
};

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kInitStddev = 0.02;

class FontNet {
 public:
  struct ContentCode {
    Tensor code;                // B x Bc
    std::vector<Tensor> skips;  // depth-1 maps, shallowest first
  };

  FontNet(FontNetConfig config, std::uint64_t seed);
  // Blocks point into the BatchNorm state map, which survives moves only.
  FontNet(const FontNet&) = delete;
  FontNet& operator=(const FontNet&) = delete;
  FontNet(FontNet&&) = default;
  FontNet& operator=(FontNet&&) = default;

  const FontNetConfig& config() const { return config_; }
  // Trainable tensors: both encoders, the mixer tensor "mixer.w", the decoder.
  const NamedTensors& params() const { return params_; }
  // Non-trainable BatchNorm running statistics.
  const NamedTensors& buffers() const { return buffers_; }

  // refs: B x r x H x W with each reference image in one channel.
  Tensor style_encode(Graph& g, const Tensor& refs, ops::NormMode mode);
  ContentCode content_encode(Graph& g, const Tensor& refs, ops::NormMode mode);
  Tensor mix(Graph& g, const Tensor& style_code, const Tensor& content_code) const;
  // mixed: B x K. Returns B x 1 x H x W in (0, 1).
  Tensor decode(Graph& g, const Tensor& mixed, const std::vector<Tensor>& skips, ops::NormMode mode);
  Tensor forward_generate(Graph& g, const Tensor& style_refs, const Tensor& content_refs,
                          ops::NormMode mode);

  // Copies values from `tensors` into every parameter and buffer of the same
  // name. Throws when one is missing or has another shape.
  void load(const NamedTensors& tensors);

 private:
  struct Block {
    std::string name;
    Tensor kernel, bias, gamma, beta;
    ops::BatchNormState* bn = nullptr;
    int stride = 1, padding = 0, output_padding = 0;
  };

  Block make_block(const std::string& name, Shape kernel_shape, std::size_t out_channels, bool batchnorm,
                   int stride, int padding, int output_padding, Rng& rng);
  std::vector<Block> make_encoder(const std::string& prefix, Rng& rng);
  Tensor encode(Graph& g, std::vector<Block>& blocks, const Tensor& refs, ops::NormMode mode,
                std::vector<Tensor>* skips);
  void check_refs(const Tensor& refs, const char* what) const;

  FontNetConfig config_;
  NamedTensors params_;
  NamedTensors buffers_;
  std::map<std::string, ops::BatchNormState> bn_;
  std::vector<Block> style_encoder_;
  std::vector<Block> content_encoder_;
  std::vector<Block> decoder_;
  Tensor mixer_;
};

}  // namespace emd
