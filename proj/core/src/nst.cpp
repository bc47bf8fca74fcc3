#include "emd/nst.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace emd::nst {

namespace {

void check_alpha(double alpha, const char* what) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument(std::string(what) + ": alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
}

void check_stats(const Tensor& f, const ChannelStats& s, const char* what) {
  const Shape bc{f.dim(0), f.dim(1)};
  if (s.mean.shape() != bc || s.std.shape() != bc) {
    throw ShapeError(std::string(what) + ": statistics must be " + shape_string(bc) + ", got " +
                     shape_string(s.mean.shape()) + " / " + shape_string(s.std.shape()));
  }
}

// (x - mu) / max(sigma, epsilon) per (batch, channel).
Tensor guarded_normalize(Graph& g, const Tensor& input, double epsilon) {
  if (input.rank() != 4) throw ShapeError("statistic_match: expected B x C x H x W, got " + shape_string(input.shape()));
  if (!(epsilon > 0.0)) throw std::invalid_argument("statistic_match: epsilon must be positive");
  const std::size_t groups = input.dim(0) * input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  const auto x = input.data();
  Tensor out = Tensor::zeros(input.shape());
  auto y = out.mutable_data();
  std::vector<double> inv(groups);
  std::vector<bool> clamped(groups);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double* p = x.data() + gi * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    double mu = acc / static_cast<double>(plane);
    double residual = 0.0;
    for (std::size_t i = 0; i < plane; ++i) residual += p[i] - mu;
    mu += residual / static_cast<double>(plane);
    double ss = 0.0;
    for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mu) * (p[i] - mu);
    const double sigma = std::sqrt(ss / static_cast<double>(plane));
    clamped[gi] = sigma <= epsilon;
    inv[gi] = 1.0 / std::max(sigma, epsilon);
    for (std::size_t i = 0; i < plane; ++i) y[gi * plane + i] = (p[i] - mu) * inv[gi];
  }
  if (g.track({&input}, out)) {
    g.record(out, [input, out, groups, plane, inv, clamped]() mutable {
      const auto yv = out.data();
      const auto dy = out.grad();
      auto dx = input.mutable_grad();
      const double n = static_cast<double>(plane);
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t o = gi * plane;
        double sum_dy = 0.0, sum_dy_y = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dy[o + i];
          sum_dy_y += dy[o + i] * yv[o + i];
        }
        // With a clamped denominator sigma no longer depends on x.
        if (clamped[gi]) sum_dy_y = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          dx[o + i] += inv[gi] * (dy[o + i] - sum_dy / n - yv[o + i] * sum_dy_y / n);
        }
      }
    });
  }
  return out;
}

Tensor squared_distance(Graph& g, const Tensor& a, const Tensor& b) {
  return ops::sum(g, ops::square(g, ops::sub(g, a, b)));
}

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  return normal_tensor(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng, true);
}

}  // namespace

ChannelStats channel_stats(Graph& g, const Tensor& f, double epsilon) {
  auto [mean, stdev] = ops::channel_mean_std(g, f, epsilon);
  return {mean, stdev};
}

Tensor statistic_match(Graph& g, const Tensor& f_con, const ChannelStats& target, double epsilon) {
  const Tensor normalized = guarded_normalize(g, f_con, epsilon);
  check_stats(f_con, target, "statistic_match");
  return ops::channel_affine(g, normalized, target.std, target.mean);
}

ChannelStats blend_stats(Graph& g, const ChannelStats& a, const ChannelStats& b, double alpha) {
  check_alpha(alpha, "blend_stats");
  auto blend = [&](const Tensor& x, const Tensor& y) {
    return ops::add(g, ops::scale(g, x, 1.0 - alpha), ops::scale(g, y, alpha));
  };
  return {blend(a.mean, b.mean), blend(a.std, b.std)};
}

Tensor tradeoff_mix(Graph& g, const Tensor& f_con, const ChannelStats& con_stats, const ChannelStats& sty_stats,
                    double alpha) {
  check_alpha(alpha, "tradeoff_mix");
  return statistic_match(g, f_con, blend_stats(g, con_stats, sty_stats, alpha));
}

Tensor style_interpolate(Graph& g, const Tensor& f_con, const ChannelStats& stats1, const ChannelStats& stats2,
                         double alpha) {
  check_alpha(alpha, "style_interpolate");
  return statistic_match(g, f_con, blend_stats(g, stats1, stats2, alpha));
}

Tensor content_loss(Graph& g, const Tensor& f_gen, const Tensor& f_con) {
  require_same_shape(f_gen, f_con, "content_loss");
  return ops::mean(g, ops::square(g, ops::sub(g, f_gen, f_con)));
}

Tensor style_loss(Graph& g, const std::vector<Tensor>& f_gen, const std::vector<Tensor>& f_sty) {
  if (f_gen.size() != f_sty.size() || f_gen.empty()) {
    throw ShapeError("style_loss: " + std::to_string(f_gen.size()) + " generated layers vs " +
                     std::to_string(f_sty.size()) + " style layers");
  }
  Tensor total;
  for (std::size_t l = 0; l < f_gen.size(); ++l) {
    if (f_gen[l].rank() != 4 || f_sty[l].rank() != 4 || f_gen[l].dim(0) != f_sty[l].dim(0) ||
        f_gen[l].dim(1) != f_sty[l].dim(1)) {
      throw ShapeError("style_loss: layer " + std::to_string(l) + " shapes " + shape_string(f_gen[l].shape()) +
                       " and " + shape_string(f_sty[l].shape()) + " disagree in batch or channels");
    }
    const ChannelStats a = channel_stats(g, f_gen[l]);
    const ChannelStats b = channel_stats(g, f_sty[l]);
    const Tensor term = ops::add(g, squared_distance(g, a.mean, b.mean), squared_distance(g, a.std, b.std));
    total = total.defined() ? ops::add(g, total, term) : term;
  }
  return total;
}

Tensor tv_loss(Graph& g, const Tensor& image) {
  if (image.rank() != 4) throw ShapeError("tv_loss: expected B x C x H x W, got " + shape_string(image.shape()));
  const std::size_t groups = image.dim(0) * image.dim(1);
  const std::size_t h = image.dim(2), w = image.dim(3);
  const double n = static_cast<double>(image.numel());
  const auto x = image.data();
  double s = 0.0;
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double* p = x.data() + gi * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        if (i + 1 < h) s += (p[(i + 1) * w + j] - p[i * w + j]) * (p[(i + 1) * w + j] - p[i * w + j]);
        if (j + 1 < w) s += (p[i * w + j + 1] - p[i * w + j]) * (p[i * w + j + 1] - p[i * w + j]);
      }
    }
  }
  Tensor out = Tensor::scalar(s / n);
  if (g.track({&image}, out)) {
    g.record(out, [image, out, groups, h, w, n]() mutable {
      const double d = out.grad()[0] * 2.0 / n;
      const auto x = image.data();
      auto dx = image.mutable_grad();
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t o = gi * h * w;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const std::size_t k = o + i * w + j;
            if (i + 1 < h) {
              const double diff = x[k + w] - x[k];
              dx[k + w] += d * diff;
              dx[k] -= d * diff;
            }
            if (j + 1 < w) {
              const double diff = x[k + 1] - x[k];
              dx[k + 1] += d * diff;
              dx[k] -= d * diff;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor total_loss(Graph& g, const Tensor& content, const Tensor& style, const Tensor& tv, const LossWeights& w) {
  if (w.content < 0.0 || w.style < 0.0 || w.tv < 0.0) throw std::invalid_argument("total_loss: negative weight");
  return ops::weighted_sum(g, {{w.content, content}, {w.style, style}, {w.tv, tv}});
}

// ---- network ----

void NstConfig::validate() const {
  if (channels < 1) throw std::invalid_argument("NstConfig: channels must be positive");
  if (base_channels < 1) throw std::invalid_argument("NstConfig: base_channels must be positive");
  if (res_blocks < 0) throw std::invalid_argument("NstConfig: res_blocks must be non-negative");
}

NstNet::Conv NstNet::make_conv(const std::string& name, std::size_t in, std::size_t out, int k, int stride,
                               Rng& rng, NamedTensors* extra) {
  const auto kk = static_cast<std::size_t>(k);
  Conv c;
  c.stride = stride;
  c.padding = (k - 1) / 2;
  c.kernel = he_normal({out, in, kk, kk}, in * kk * kk, rng);
  c.bias = Tensor::zeros({out}, true);
  params_.add(name + ".kernel", c.kernel);
  params_.add(name + ".bias", c.bias);
  if (extra) {
    extra->add(name + ".kernel", c.kernel);
    extra->add(name + ".bias", c.bias);
  }
  return c;
}

NstNet::NstNet(NstConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto ch = static_cast<std::size_t>(config_.channels);
  const auto c = static_cast<std::size_t>(config_.base_channels);
  const std::size_t m = config_.mix_channels();

  content_convs_.push_back(make_conv("content_enc.conv0", ch, c, 5, 1, rng, nullptr));
  content_convs_.push_back(make_conv("content_enc.conv1", c, 2 * c, 3, 2, rng, nullptr));
  content_convs_.push_back(make_conv("content_enc.conv2", 2 * c, m, 3, 2, rng, nullptr));
  for (int i = 0; i < config_.res_blocks; ++i) {
    for (int j = 0; j < 2; ++j) {
      content_res_.push_back(make_conv("content_enc.res" + std::to_string(i) + "." + std::to_string(j), m, m, 3, 1,
                                       rng, nullptr));
    }
  }

  style_convs_.push_back(make_conv("style_enc.conv0", ch, c, 5, 1, rng, nullptr));
  style_convs_.push_back(make_conv("style_enc.conv1", c, 2 * c, 3, 2, rng, nullptr));
  style_convs_.push_back(make_conv("style_enc.conv2", 2 * c, m, 3, 2, rng, nullptr));
  for (int j = 0; j < 2; ++j) style_res_.push_back(make_conv("style_enc.res0." + std::to_string(j), m, m, 3, 1, rng, nullptr));
  fc_weight_ = he_normal({2 * m, m}, m, rng);
  fc_bias_ = Tensor::zeros({2 * m}, true);
  params_.add("style_enc.fc.weight", fc_weight_);
  params_.add("style_enc.fc.bias", fc_bias_);

  for (int i = 0; i < config_.res_blocks; ++i) {
    for (int j = 0; j < 2; ++j) {
      decoder_res_.push_back(
          make_conv("dec.res" + std::to_string(i) + "." + std::to_string(j), m, m, 3, 1, rng, &decoder_params_));
    }
  }
  decoder_up_.push_back(make_conv("dec.up0", m, 2 * c, 3, 1, rng, &decoder_params_));
  decoder_up_.push_back(make_conv("dec.up1", 2 * c, c, 3, 1, rng, &decoder_params_));
  decoder_out_ = make_conv("dec.out", c, ch, 5, 1, rng, &decoder_params_);
  round_to_float(params_);
}

void NstNet::check_image(const Tensor& image, const char* what) const {
  if (image.rank() != 4 || image.dim(1) != static_cast<std::size_t>(config_.channels)) {
    throw ShapeError(std::string(what) + ": expected B x " + std::to_string(config_.channels) +
                     " x H x W image, got " + shape_string(image.shape()));
  }
  if (image.dim(2) < 4 || image.dim(3) < 4) {
    throw ShapeError(std::string(what) + ": image must be at least 4 x 4, got " + shape_string(image.shape()));
  }
}

Tensor NstNet::apply(Graph& g, const Conv& c, const Tensor& x) const {
  return ops::conv2d(g, x, c.kernel, c.bias, c.stride, c.padding);
}

Tensor NstNet::residual(Graph& g, const Conv& a, const Conv& b, const Tensor& x, double slope) const {
  Tensor y = ops::leaky_relu(g, apply(g, a, x), slope);
  y = ops::leaky_relu(g, apply(g, b, y), slope);
  return ops::add(g, x, y);
}

Tensor NstNet::content_encode(Graph& g, const Tensor& image) const {
  check_image(image, "content_encode");
  Tensor x = image;
  for (const Conv& c : content_convs_) x = ops::leaky_relu(g, apply(g, c, x), kNstLeakySlope);
  for (std::size_t i = 0; i + 1 < content_res_.size(); i += 2) {
    x = residual(g, content_res_[i], content_res_[i + 1], x, kNstLeakySlope);
  }
  return x;
}

ChannelStats NstNet::style_encode(Graph& g, const Tensor& image) const {
  check_image(image, "style_encode");
  Tensor x = image;
  for (const Conv& c : style_convs_) x = ops::leaky_relu(g, apply(g, c, x), kNstLeakySlope);
  x = residual(g, style_res_[0], style_res_[1], x, kNstLeakySlope);
  x = ops::global_avg_pool(g, x);
  x = ops::reshape(g, x, {x.dim(0), x.dim(1)});
  const Tensor head = ops::fully_connected(g, x, fc_weight_, fc_bias_);
  const std::size_t m = config_.mix_channels();
  return {ops::slice_channels(g, head, 0, m), ops::abs(g, ops::slice_channels(g, head, m, 2 * m))};
}

Tensor NstNet::decode(Graph& g, const Tensor& features, std::size_t height, std::size_t width) const {
  if (features.rank() != 4 || features.dim(1) != config_.mix_channels()) {
    throw ShapeError("decode: expected B x " + std::to_string(config_.mix_channels()) + " x h x w features, got " +
                     shape_string(features.shape()));
  }
  Tensor x = features;
  for (std::size_t i = 0; i + 1 < decoder_res_.size(); i += 2) {
    x = residual(g, decoder_res_[i], decoder_res_[i + 1], x, 0.0);
  }
  for (const Conv& c : decoder_up_) {
    x = ops::upsample_nearest(g, x, 2);
    x = ops::relu(g, apply(g, c, x));
  }
  x = apply(g, decoder_out_, x);
  if (x.dim(2) != height || x.dim(3) != width) x = ops::crop(g, x, height, width);
  return x;
}

Tensor NstNet::forward(Graph& g, const Tensor& style, const Tensor& content) const {
  const Tensor f = content_encode(g, content);
  return decode(g, statistic_match(g, f, style_encode(g, style)), content.dim(2), content.dim(3));
}

Tensor NstNet::forward_tradeoff(Graph& g, const Tensor& style, const Tensor& content, double alpha) const {
  check_alpha(alpha, "forward_tradeoff");
  const Tensor f = content_encode(g, content);
  const Tensor mixed = tradeoff_mix(g, f, channel_stats(g, f), style_encode(g, style), alpha);
  return decode(g, mixed, content.dim(2), content.dim(3));
}

Tensor NstNet::forward_interpolate(Graph& g, const Tensor& style1, const Tensor& style2, const Tensor& content,
                                   double alpha) const {
  check_alpha(alpha, "forward_interpolate");
  const Tensor f = content_encode(g, content);
  const Tensor mixed = style_interpolate(g, f, style_encode(g, style1), style_encode(g, style2), alpha);
  return decode(g, mixed, content.dim(2), content.dim(3));
}

void NstNet::load(const NamedTensors& tensors) {
  for (const auto& [name, t] : params_) {
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

// ---- loss network ----

FeatureExtractor::FeatureExtractor(int channels, int width, std::uint64_t seed) {
  if (channels < 1 || width < 1) throw std::invalid_argument("FeatureExtractor: channels and width must be positive");
  Rng rng(seed);
  auto in = static_cast<std::size_t>(channels);
  auto out = static_cast<std::size_t>(width);
  for (int s = 0; s < kStages; ++s) {
    const std::string name = "extractor." + std::to_string(s);
    weights_.add(name + ".kernel", normal_tensor({out, in, 3, 3}, std::sqrt(2.0 / static_cast<double>(in * 9)), rng, false));
    weights_.add(name + ".bias", Tensor::zeros({out}));
    in = out;
    out *= 2;
  }
  round_to_float(weights_);
}

FeatureExtractor::FeatureExtractor(const NamedTensors& weights) {
  for (int s = 0; s < kStages; ++s) {
    const std::string name = "extractor." + std::to_string(s);
    const Tensor& k = weights.get(name + ".kernel");
    const Tensor& b = weights.get(name + ".bias");
    if (k.rank() != 4 || k.dim(2) != k.dim(3) || k.dim(2) % 2 == 0 || b.shape() != Shape{k.dim(0)}) {
      throw ShapeError("FeatureExtractor: stage " + std::to_string(s) + " kernel " + shape_string(k.shape()) +
                       " / bias " + shape_string(b.shape()) + " are not a square odd kernel with matching bias");
    }
    weights_.add(name + ".kernel", k.detach());
    weights_.add(name + ".bias", b.detach());
  }
}

std::vector<Tensor> FeatureExtractor::features(Graph& g, const Tensor& image) const {
  std::vector<Tensor> taps;
  Tensor x = image;
  for (int s = 0; s < kStages; ++s) {
    const std::string name = "extractor." + std::to_string(s);
    const Tensor& k = weights_.get(name + ".kernel");
    x = ops::relu(g, ops::conv2d(g, x, k, weights_.get(name + ".bias"), s == 0 ? 1 : 2, static_cast<int>(k.dim(2) / 2)));
    taps.push_back(x);
  }
  return taps;
}

NstLoss nst_objective(Graph& g, const FeatureExtractor& extractor, const Tensor& generated, const Tensor& content,
                      const Tensor& style, const LossWeights& weights) {
  const auto gen = extractor.features(g, generated);
  const auto con = extractor.features(g, content);
  const auto sty = extractor.features(g, style);
  NstLoss out;
  out.content = content_loss(g, gen.back(), con.back());
  out.style = style_loss(g, gen, sty);
  out.tv = tv_loss(g, generated);
  out.total = total_loss(g, out.content, out.style, out.tv, weights);
  return out;
}

}  // namespace emd::nst
