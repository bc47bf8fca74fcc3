#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emd/graph.hpp"
#include "emd/ops.hpp"
#include "emd/params.hpp"

// Neural style transfer: channel statistics, statistic matching, the
// content/style/TV objective, and a small encoder/decoder network.
namespace emd::nst {

// Per (batch, channel) statistics, each B x C.
struct ChannelStats {
  Tensor mean;
  Tensor std;
};

inline constexpr double kMatchEpsilon = 1e-8;

// Spatial mean and sqrt(population variance + epsilon).
ChannelStats channel_stats(Graph& g, const Tensor& f, double epsilon = 0.0);

// (f - mu(f)) / max(sigma(f), epsilon) * target.std + target.mean, per channel.
// A constant channel maps to target.mean.
Tensor statistic_match(Graph& g, const Tensor& f_con, const ChannelStats& target, double epsilon = kMatchEpsilon);

// Elementwise (1 - alpha) * a + alpha * b over both mean and std.
ChannelStats blend_stats(Graph& g, const ChannelStats& a, const ChannelStats& b, double alpha);

// statistic_match towards a blend of the content's own statistics and the
// style statistics. alpha = 0 reconstructs the content features.
Tensor tradeoff_mix(Graph& g, const Tensor& f_con, const ChannelStats& con_stats, const ChannelStats& sty_stats,
                    double alpha);
// statistic_match towards a blend of two styles.
Tensor style_interpolate(Graph& g, const Tensor& f_con, const ChannelStats& stats1, const ChannelStats& stats2,
                         double alpha);

// ||f_gen - f_con||^2 / numel.
Tensor content_loss(Graph& g, const Tensor& f_gen, const Tensor& f_con);
// sum over layers of ||mu_gen - mu_sty||^2 + ||sigma_gen - sigma_sty||^2.
Tensor style_loss(Graph& g, const std::vector<Tensor>& f_gen, const std::vector<Tensor>& f_sty);
// Squared vertical and horizontal neighbour differences over the pixel count.
Tensor tv_loss(Graph& g, const Tensor& image);

struct LossWeights {
  double content = 1.0;
  double style = 5.0;
  double tv = 1e-5;
};

Tensor total_loss(Graph& g, const Tensor& content, const Tensor& style, const Tensor& tv,
                  const LossWeights& weights = {});

inline constexpr double kNstLeakySlope = 0.2;

struct NstConfig {
  int channels = 3;       // image channels
  int base_channels = 8;  // c; the mixing layer has 4c channels
  int res_blocks = 4;
  LossWeights weights;

  std::size_t mix_channels() const { return 4 * static_cast<std::size_t>(base_channels); }
  void validate() const;
};

// Style encoder, content encoder and decoder. Style statistics are emitted by
// a fully-connected head of width 2 * mix_channels: means, then stds.
class NstNet {
 public:
  NstNet(NstConfig config, std::uint64_t seed);

  const NstConfig& config() const { return config_; }
  const NamedTensors& params() const { return params_; }
  // The decoder's slice of params().
  const NamedTensors& decoder_params() const { return decoder_params_; }

  // B x 4c x ceil(H/4) x ceil(W/4).
  Tensor content_encode(Graph& g, const Tensor& image) const;
  ChannelStats style_encode(Graph& g, const Tensor& image) const;
  // Output cropped to height x width.
  Tensor decode(Graph& g, const Tensor& features, std::size_t height, std::size_t width) const;

  Tensor forward(Graph& g, const Tensor& style, const Tensor& content) const;
  // Mixing with the content's own statistics weighted by 1 - alpha.
  Tensor forward_tradeoff(Graph& g, const Tensor& style, const Tensor& content, double alpha) const;
  Tensor forward_interpolate(Graph& g, const Tensor& style1, const Tensor& style2, const Tensor& content,
                             double alpha) const;

  // Copies values from `tensors` into every parameter of the same name.
  void load(const NamedTensors& tensors);

 private:
  struct Conv {
    Tensor kernel, bias;
    int stride = 1, padding = 0;
  };
  Conv make_conv(const std::string& name, std::size_t in, std::size_t out, int k, int stride, Rng& rng,
                 NamedTensors* extra);
  Tensor apply(Graph& g, const Conv& c, const Tensor& x) const;
  Tensor residual(Graph& g, const Conv& a, const Conv& b, const Tensor& x, double slope) const;
  void check_image(const Tensor& image, const char* what) const;

  NstConfig config_;
  NamedTensors params_;
  NamedTensors decoder_params_;
  std::vector<Conv> content_convs_, content_res_;
  std::vector<Conv> style_convs_, style_res_;
  Tensor fc_weight_, fc_bias_;
  std::vector<Conv> decoder_res_, decoder_up_;
  Conv decoder_out_;
};

// Fixed convolutional feature extractor for the loss: four conv+ReLU stages,
// the first at stride 1 and the rest at stride 2. Every stage output is a
// style tap; the last one is also the content tap.
class FeatureExtractor {
 public:
  FeatureExtractor(int channels, int width, std::uint64_t seed);
  // Replaces the random weights with externally supplied ones named
  // "extractor.<stage>.kernel" / ".bias".
  explicit FeatureExtractor(const NamedTensors& weights);

  std::vector<Tensor> features(Graph& g, const Tensor& image) const;
  const NamedTensors& weights() const { return weights_; }

  static constexpr int kStages = 4;

 private:
  NamedTensors weights_;
};

struct NstLoss {
  Tensor content, style, tv, total;
};

// Objective of a generated image against one content and one style image.
NstLoss nst_objective(Graph& g, const FeatureExtractor& extractor, const Tensor& generated, const Tensor& content,
                      const Tensor& style, const LossWeights& weights = {});

}  // namespace emd::nst
