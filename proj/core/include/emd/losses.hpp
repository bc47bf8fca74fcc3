#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "emd/graph.hpp"
#include "emd/image.hpp"
#include "emd/tensor.hpp"

// Weighted L1 training objective for typeface transfer and the image metrics.
namespace emd::losses {

// A pixel is black iff its value is strictly below this threshold.
inline constexpr double kBlackThreshold = 0.5;

// 1 for black pixels. Values outside [0, 1] are rejected.
std::vector<std::uint8_t> binarize(std::span<const double> image);
std::size_t count_black(std::span<const double> image);

struct ThicknessWeight {
  double weight = 0.0;
  // Set when the target has no black pixel; the weight then falls back to
  // 1 / pixel count.
  bool degenerate = false;
};

// 1 / number of black pixels.
ThicknessWeight size_thickness_weight(std::span<const double> target);

// Mean intensity of the black pixels, 0 for an image without any.
double black_pixel_mean(std::span<const double> target);

// Softmax over the batch of black_pixel_mean.
std::vector<double> darkness_weight(std::span<const std::span<const double>> targets);

struct BatchWeights {
  std::vector<double> st;  // size/thickness weight per image
  std::vector<double> d;   // darkness weight per image, sums to 1
  std::vector<bool> degenerate;
};

// targets: B x 1 x H x W.
BatchWeights batch_weights(const Tensor& targets);

// sum_b st[b] * d[b] * sum_pixels |generated - target|, differentiable in
// `generated`.
Tensor weighted_l1_loss(Graph& g, const Tensor& generated, const Tensor& targets);

double l1_metric(std::span<const double> a, std::span<const double> b);
double rmse_metric(std::span<const double> a, std::span<const double> b);
// Fraction of pixels whose binarized values differ.
double pdar_metric(std::span<const double> a, std::span<const double> b);

inline double l1_metric(const Image& a, const Image& b) { return l1_metric(a.pixels, b.pixels); }
inline double rmse_metric(const Image& a, const Image& b) { return rmse_metric(a.pixels, b.pixels); }
inline double pdar_metric(const Image& a, const Image& b) { return pdar_metric(a.pixels, b.pixels); }

}  // namespace emd::losses
