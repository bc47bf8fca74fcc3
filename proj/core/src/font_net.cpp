#include "emd/font_net.hpp"

#include <algorithm>
#include <stdexcept>

namespace emd {

std::vector<std::size_t> FontNetConfig::encoder_sizes() const {
  std::vector<std::size_t> sizes{static_cast<std::size_t>(image_size)};
  while (sizes.back() > 1) sizes.push_back(ops::conv_output_extent(sizes.back(), 3, 2, 1));
  return sizes;
}

std::vector<std::size_t> FontNetConfig::encoder_channels() const {
  const auto c = static_cast<std::size_t>(base_channels);
  std::vector<std::size_t> ch;
  for (int i = 0; i < depth(); ++i) ch.push_back(c * std::min<std::size_t>(std::size_t{1} << i, 8));
  return ch;
}

std::vector<std::size_t> FontNetConfig::decoder_channels() const {
  const auto enc = encoder_channels();
  std::vector<std::size_t> ch;
  for (int j = 1; j < depth(); ++j) ch.push_back(enc[static_cast<std::size_t>(depth() - j - 1)]);
  return ch;
}

void FontNetConfig::validate() const {
  const bool pow2 = image_size >= 4 && (image_size & (image_size - 1)) == 0;
  if (!pow2 && image_size != 80) {
    throw std::invalid_argument("image_size must be a power of two >= 4 or 80, got " +
                                std::to_string(image_size));
  }
  if (base_channels < 1) throw std::invalid_argument("base_channels must be positive");
  if (refs < 1) throw std::invalid_argument("reference count r must be positive");
}

FontNetConfig FontNetConfig::micro() { return FontNetConfig{8, 2, 2, true}; }

FontNet::Block FontNet::make_block(const std::string& name, Shape kernel_shape, std::size_t out_channels,
                                   bool batchnorm, int stride, int padding, int output_padding, Rng& rng) {
  Block b;
  b.name = name;
  b.stride = stride;
  b.padding = padding;
  b.output_padding = output_padding;
  b.kernel = normal_tensor(std::move(kernel_shape), kInitStddev, rng, true);
  b.bias = Tensor::zeros({out_channels}, true);
  params_.add(name + ".kernel", b.kernel);
  params_.add(name + ".bias", b.bias);
  if (batchnorm) {
    b.gamma = Tensor::full({out_channels}, 1.0, true);
    b.beta = Tensor::zeros({out_channels}, true);
    params_.add(name + ".bn.gamma", b.gamma);
    params_.add(name + ".bn.beta", b.beta);
    auto [it, inserted] = bn_.emplace(name, ops::BatchNormState::fresh(out_channels));
    buffers_.add(name + ".bn.running_mean", it->second.running_mean);
    buffers_.add(name + ".bn.running_var", it->second.running_var);
    b.bn = &it->second;
  }
  return b;
}

std::vector<FontNet::Block> FontNet::make_encoder(const std::string& prefix, Rng& rng) {
  const auto ch = config_.encoder_channels();
  const int depth = config_.depth();
  std::vector<Block> blocks;
  std::size_t in = static_cast<std::size_t>(config_.refs);
  for (int i = 0; i < depth; ++i) {
    const bool first = i == 0;
    const int k = first ? 5 : 3;
    const auto kk = static_cast<std::size_t>(k);
    // The 1x1 bottleneck block skips BatchNorm: with one spatial position it
    // would normalize the code across the batch.
    const bool bn = i + 1 < depth;
    blocks.push_back(make_block(prefix + "." + std::to_string(i), {ch[i], in, kk, kk}, ch[i], bn,
                                first ? 1 : 2, first ? 2 : 1, 0, rng));
    in = ch[i];
  }
  return blocks;
}

FontNet::FontNet(FontNetConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  style_encoder_ = make_encoder("style_enc", rng);
  content_encoder_ = make_encoder("content_enc", rng);

  const std::size_t code = config_.code_size();
  mixer_ = normal_tensor({code, code, code}, kInitStddev, rng, true);
  params_.add("mixer.w", mixer_);

  const auto sizes = config_.encoder_sizes();
  const auto enc_ch = config_.encoder_channels();
  const auto dec_ch = config_.decoder_channels();
  const int depth = config_.depth();
  std::size_t in = code;
  for (int j = 1; j < depth; ++j) {
    const std::size_t in_size = sizes[static_cast<std::size_t>(depth - j)];
    const std::size_t target = sizes[static_cast<std::size_t>(depth - j - 1)];
    const int output_padding = static_cast<int>(target - (2 * in_size - 1));
    const std::size_t out = dec_ch[static_cast<std::size_t>(j - 1)];
    // Up-blocks after the first also receive the symmetric skip.
    const std::size_t cin = j == 1 ? in : in + enc_ch[static_cast<std::size_t>(depth - j)];
    decoder_.push_back(make_block("dec." + std::to_string(j - 1), {cin, out, 3, 3}, out, true, 2, 1,
                                  output_padding, rng));
    in = out;
  }
  decoder_.push_back(make_block("dec.out", {in + enc_ch[0], 1, 5, 5}, 1, false, 1, 2, 0, rng));
  round_to_float(params_);
}

void FontNet::check_refs(const Tensor& refs, const char* what) const {
  const auto n = static_cast<std::size_t>(config_.image_size);
  if (refs.rank() != 4 || refs.dim(1) != static_cast<std::size_t>(config_.refs) || refs.dim(2) != n ||
      refs.dim(3) != n) {
    throw ShapeError(std::string(what) + ": expected B x " + std::to_string(config_.refs) + " x " +
                     std::to_string(n) + " x " + std::to_string(n) + " reference stack, got " +
                     shape_string(refs.shape()));
  }
}

Tensor FontNet::encode(Graph& g, std::vector<Block>& blocks, const Tensor& refs, ops::NormMode mode,
                       std::vector<Tensor>* skips) {
  Tensor x = refs;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    Block& b = blocks[i];
    x = ops::conv2d(g, x, b.kernel, b.bias, b.stride, b.padding);
    if (b.bn) x = ops::batchnorm2d(g, x, b.gamma, b.beta, mode, *b.bn);
    x = ops::leaky_relu(g, x, kLeakySlope);
    if (skips && i + 1 < blocks.size()) skips->push_back(x);
  }
  return ops::reshape(g, x, {x.dim(0), x.dim(1)});
}

Tensor FontNet::style_encode(Graph& g, const Tensor& refs, ops::NormMode mode) {
  check_refs(refs, "style_encode");
  return encode(g, style_encoder_, refs, mode, nullptr);
}

FontNet::ContentCode FontNet::content_encode(Graph& g, const Tensor& refs, ops::NormMode mode) {
  check_refs(refs, "content_encode");
  ContentCode out;
  out.code = encode(g, content_encoder_, refs, mode, &out.skips);
  return out;
}

Tensor FontNet::mix(Graph& g, const Tensor& style_code, const Tensor& content_code) const {
  return ops::bilinear_contract(g, style_code, mixer_, content_code);
}

Tensor FontNet::decode(Graph& g, const Tensor& mixed, const std::vector<Tensor>& skips, ops::NormMode mode) {
  const int depth = config_.depth();
  if (skips.size() != static_cast<std::size_t>(depth - 1)) {
    throw ShapeError("decode: expected " + std::to_string(depth - 1) + " skip maps, got " +
                     std::to_string(skips.size()));
  }
  if (mixed.rank() != 2 || mixed.dim(1) != config_.code_size()) {
    throw ShapeError("decode: mixed code must be B x " + std::to_string(config_.code_size()) + ", got " +
                     shape_string(mixed.shape()));
  }
  Tensor x = ops::reshape(g, mixed, {mixed.dim(0), mixed.dim(1), 1, 1});
  for (std::size_t j = 0; j < decoder_.size(); ++j) {
    Block& b = decoder_[j];
    if (j > 0) {
      const Tensor& skip = skips[skips.size() - j];
      x = ops::concat_channels(g, x, config_.use_skips ? skip : Tensor::zeros(skip.shape()));
    }
    x = ops::deconv2d(g, x, b.kernel, b.bias, b.stride, b.padding, b.output_padding);
    if (j + 1 == decoder_.size()) break;
    x = ops::batchnorm2d(g, x, b.gamma, b.beta, mode, *b.bn);
    x = ops::relu(g, x);
  }
  return ops::sigmoid(g, x);
}

Tensor FontNet::forward_generate(Graph& g, const Tensor& style_refs, const Tensor& content_refs,
                                 ops::NormMode mode) {
  if (style_refs.rank() == 4 && content_refs.rank() == 4 && style_refs.dim(0) != content_refs.dim(0)) {
    throw ShapeError("forward_generate: style and content batches differ");
  }
  const Tensor style = style_encode(g, style_refs, mode);
  const ContentCode content = content_encode(g, content_refs, mode);
  const Tensor mixed = mix(g, style, content.code);
  return decode(g, mixed, content.skips, mode);
}

void FontNet::load(const NamedTensors& tensors) {
  for (const NamedTensors* group : {&params_, &buffers_}) {
    for (const auto& [name, t] : *group) {
      if (!tensors.contains(name)) throw std::invalid_argument("missing tensor '" + name + "'");
      const Tensor& src = tensors.get(name);
      if (src.shape() != t.shape()) {
        throw ShapeError("tensor '" + name + "' has shape " + shape_string(src.shape()) + ", expected " +
                         shape_string(t.shape()));
      }
      Tensor dst = t;
      std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
    }
  }
}

}  // namespace emd
