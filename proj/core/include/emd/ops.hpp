#pragma once

#include <utility>

#include "emd/graph.hpp"
#include "emd/tensor.hpp"

// Differentiable primitives. Every op takes the Graph that should tape it;
// pass a Graph in inference mode to skip recording.
namespace emd::ops {

// ---- convolution family (images are B x C x H x W) ----

// kernel: Cout x Cin x k x k, bias: Cout.
Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding);

// Transposed convolution, the adjoint of conv2d with the same kernel layout
// read as Cin x Cout x k x k. Output extent (H-1)*stride - 2*padding + k + output_padding.
Tensor deconv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
                int padding, int output_padding);

std::size_t conv_output_extent(std::size_t in, int k, int stride, int padding);
std::size_t deconv_output_extent(std::size_t in, int k, int stride, int padding, int output_padding);

// ---- normalization ----

enum class NormMode { train, eval };

struct BatchNormState {
  Tensor running_mean;  // C
  Tensor running_var;   // C, unbiased batch variance EMA
  static BatchNormState fresh(std::size_t channels);
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Train mode normalizes over batch and spatial positions and folds the batch
// statistics into `state`; eval mode normalizes with `state`.
Tensor batchnorm2d(Graph& g, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   NormMode mode, BatchNormState& state, double momentum = kBatchNormMomentum,
                   double epsilon = kBatchNormEpsilon);

// Per (batch, channel) spatial mean and sqrt(population variance + epsilon),
// each shaped B x C. A zero std propagates a zero gradient.
std::pair<Tensor, Tensor> channel_mean_std(Graph& g, const Tensor& input, double epsilon);

// (x - mean) / sqrt(var + epsilon) per (batch, channel).
Tensor instance_normalize(Graph& g, const Tensor& input, double epsilon);

// x * scale[b,c] + shift[b,c]; scale and shift are B x C.
Tensor channel_affine(Graph& g, const Tensor& input, const Tensor& scale, const Tensor& shift);

// ---- activations ----

Tensor leaky_relu(Graph& g, const Tensor& input, double slope);
inline Tensor relu(Graph& g, const Tensor& input) { return leaky_relu(g, input, 0.0); }
Tensor sigmoid(Graph& g, const Tensor& input);
Tensor abs(Graph& g, const Tensor& input);
Tensor square(Graph& g, const Tensor& input);

// ---- structure ----

// Channel (axis 1) concatenation. An undefined `b` contributes no channels.
Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b);
// Channels [begin, end) along axis 1 of a rank-2 or rank-4 tensor.
Tensor slice_channels(Graph& g, const Tensor& input, std::size_t begin, std::size_t end);
Tensor reshape(Graph& g, const Tensor& input, Shape shape);
Tensor upsample_nearest(Graph& g, const Tensor& input, int factor);
Tensor global_avg_pool(Graph& g, const Tensor& input);
// Top-left height x width window of a B x C x H x W tensor.
Tensor crop(Graph& g, const Tensor& input, std::size_t height, std::size_t width);

// ---- dense ----

// input: B x Cin, weight: Cout x Cin, bias: Cout.
Tensor fully_connected(Graph& g, const Tensor& input, const Tensor& weight, const Tensor& bias);

// out[b,k] = sum_r sum_c style[b,r] * w[r,k,c] * content[b,c].
Tensor bilinear_contract(Graph& g, const Tensor& style, const Tensor& w, const Tensor& content);

// ---- arithmetic and reductions ----

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& input, double factor);
Tensor sum(Graph& g, const Tensor& input);
Tensor mean(Graph& g, const Tensor& input);
// sum_i weights[i] * parts[i] over scalar tensors.
Tensor weighted_sum(Graph& g, std::initializer_list<std::pair<double, Tensor>> parts);

}  // namespace emd::ops
