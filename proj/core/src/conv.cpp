#include <Eigen/Core>

#include "emd/ops.hpp"

namespace emd::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;

// Geometry shared by im2col/col2im: an image of `channels` x height x width
// scanned by a k x k window producing out_h x out_w positions.
struct Window {
  std::size_t channels, height, width;
  int k, stride, padding;
  std::size_t out_h, out_w;

  std::size_t rows() const { return channels * static_cast<std::size_t>(k * k); }
  std::size_t cols() const { return out_h * out_w; }
};

void im2col(const double* image, const Window& w, double* col) {
  const std::size_t cols = w.cols();
  for (std::size_t c = 0; c < w.channels; ++c) {
    const double* plane = image + c * w.height * w.width;
    for (int ki = 0; ki < w.k; ++ki) {
      for (int kj = 0; kj < w.k; ++kj) {
        double* row = col + ((c * w.k + ki) * w.k + kj) * cols;
        for (std::size_t oh = 0; oh < w.out_h; ++oh) {
          const long ih = static_cast<long>(oh) * w.stride - w.padding + ki;
          double* dst = row + oh * w.out_w;
          if (ih < 0 || ih >= static_cast<long>(w.height)) {
            std::fill(dst, dst + w.out_w, 0.0);
            continue;
          }
          const double* src = plane + ih * w.width;
          for (std::size_t ow = 0; ow < w.out_w; ++ow) {
            const long iw = static_cast<long>(ow) * w.stride - w.padding + kj;
            dst[ow] = (iw < 0 || iw >= static_cast<long>(w.width)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

// Scatter-adds columns back into the image (adjoint of im2col).
void col2im(const double* col, const Window& w, double* image) {
  const std::size_t cols = w.cols();
  for (std::size_t c = 0; c < w.channels; ++c) {
    double* plane = image + c * w.height * w.width;
    for (int ki = 0; ki < w.k; ++ki) {
      for (int kj = 0; kj < w.k; ++kj) {
        const double* row = col + ((c * w.k + ki) * w.k + kj) * cols;
        for (std::size_t oh = 0; oh < w.out_h; ++oh) {
          const long ih = static_cast<long>(oh) * w.stride - w.padding + ki;
          if (ih < 0 || ih >= static_cast<long>(w.height)) continue;
          double* dst = plane + ih * w.width;
          const double* src = row + oh * w.out_w;
          for (std::size_t ow = 0; ow < w.out_w; ++ow) {
            const long iw = static_cast<long>(ow) * w.stride - w.padding + kj;
            if (iw >= 0 && iw < static_cast<long>(w.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void check_kernel(const Tensor& kernel, const Tensor& bias, std::size_t bias_len, const char* op) {
  if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3)) {
    throw ShapeError(std::string(op) + ": kernel must be rank 4 with square window, got " +
                     shape_string(kernel.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != bias_len) {
    throw ShapeError(std::string(op) + ": bias " + shape_string(bias.shape()) + " does not match " +
                     std::to_string(bias_len) + " output channels");
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, int k, int stride, int padding) {
  if (stride < 1) throw ShapeError("conv2d: stride must be positive");
  if (k < 1 || padding < 0) throw ShapeError("conv2d: invalid kernel size or padding");
  const long padded = static_cast<long>(in) + 2L * padding;
  if (padded < k) {
    throw ShapeError("conv2d: padded extent " + std::to_string(padded) + " smaller than kernel " +
                     std::to_string(k));
  }
  return static_cast<std::size_t>((padded - k) / stride + 1);
}

std::size_t deconv_output_extent(std::size_t in, int k, int stride, int padding, int output_padding) {
  if (stride < 1) throw ShapeError("deconv2d: stride must be positive");
  if (output_padding < 0 || output_padding >= stride) {
    throw ShapeError("deconv2d: output_padding " + std::to_string(output_padding) +
                     " must lie in [0, stride)");
  }
  const long out = (static_cast<long>(in) - 1) * stride - 2L * padding + k + output_padding;
  if (out < 1) throw ShapeError("deconv2d: non-positive output extent");
  return static_cast<std::size_t>(out);
}

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be B x C x H x W, got " + shape_string(input.shape()));
  check_kernel(kernel, bias, kernel.dim(0), "conv2d");
  const std::size_t batch = input.dim(0), cin = input.dim(1);
  if (kernel.dim(1) != cin) {
    throw ShapeError("conv2d: kernel " + shape_string(kernel.shape()) + " expects " +
                     std::to_string(kernel.dim(1)) + " input channels, input " +
                     shape_string(input.shape()) + " has " + std::to_string(cin));
  }
  const int k = static_cast<int>(kernel.dim(2));
  const std::size_t cout = kernel.dim(0);
  const Window win{cin,
                   input.dim(2),
                   input.dim(3),
                   k,
                   stride,
                   padding,
                   conv_output_extent(input.dim(2), k, stride, padding),
                   conv_output_extent(input.dim(3), k, stride, padding)};

  Tensor out = Tensor::zeros({batch, cout, win.out_h, win.out_w});
  const ConstMatrixMap wm(kernel.data().data(), cout, win.rows());
  const ConstVectorMap bv(bias.data().data(), cout);
  AlignedBuffer col(win.rows() * win.cols());
  const std::size_t in_stride = cin * win.height * win.width;
  const std::size_t out_stride = cout * win.cols();
  auto od = out.mutable_data();
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(input.data().data() + b * in_stride, win, col.data());
    MatrixMap ob(od.data() + b * out_stride, cout, win.cols());
    ob.noalias() = wm * ConstMatrixMap(col.data(), win.rows(), win.cols());
    ob.colwise() += bv;
  }

  if (g.track({&input, &kernel, &bias}, out)) {
    g.record(out, [input, kernel, bias, out, win, batch, cout, in_stride, out_stride]() mutable {
      const auto dout = out.grad();
      AlignedBuffer col(win.rows() * win.cols());
      const ConstMatrixMap wm(kernel.data().data(), cout, win.rows());
      for (std::size_t b = 0; b < batch; ++b) {
        const ConstMatrixMap gb(dout.data() + b * out_stride, cout, win.cols());
        if (bias.requires_grad()) {
          auto db = bias.mutable_grad();
          for (std::size_t o = 0; o < cout; ++o) {
            const double* row = dout.data() + b * out_stride + o * win.cols();
            double s = 0.0;
            for (std::size_t i = 0; i < win.cols(); ++i) s += row[i];
            db[o] += s;
          }
        }
        if (kernel.requires_grad()) {
          im2col(input.data().data() + b * in_stride, win, col.data());
          MatrixMap(kernel.mutable_grad().data(), cout, win.rows()).noalias() +=
              gb * ConstMatrixMap(col.data(), win.rows(), win.cols()).transpose();
        }
        if (input.requires_grad()) {
          MatrixMap(col.data(), win.rows(), win.cols()).noalias() = wm.transpose() * gb;
          col2im(col.data(), win, input.mutable_grad().data() + b * in_stride);
        }
      }
    });
  }
  return out;
}

Tensor deconv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
                int padding, int output_padding) {
  if (input.rank() != 4) throw ShapeError("deconv2d: input must be B x C x H x W, got " + shape_string(input.shape()));
  check_kernel(kernel, bias, kernel.dim(1), "deconv2d");
  const std::size_t batch = input.dim(0), cin = input.dim(1);
  if (kernel.dim(0) != cin) {
    throw ShapeError("deconv2d: kernel " + shape_string(kernel.shape()) + " expects " +
                     std::to_string(kernel.dim(0)) + " input channels, input " +
                     shape_string(input.shape()) + " has " + std::to_string(cin));
  }
  const int k = static_cast<int>(kernel.dim(2));
  const std::size_t cout = kernel.dim(1);
  const std::size_t oh = deconv_output_extent(input.dim(2), k, stride, padding, output_padding);
  const std::size_t ow = deconv_output_extent(input.dim(3), k, stride, padding, output_padding);
  // The window geometry of the equivalent forward convolution over the output.
  const Window win{cout, oh, ow, k, stride, padding, input.dim(2), input.dim(3)};

  Tensor out = Tensor::zeros({batch, cout, oh, ow});
  const ConstMatrixMap wm(kernel.data().data(), cin, win.rows());
  AlignedBuffer col(win.rows() * win.cols());
  const std::size_t in_stride = cin * win.cols();
  const std::size_t out_stride = cout * oh * ow;
  auto od = out.mutable_data();
  for (std::size_t b = 0; b < batch; ++b) {
    const ConstMatrixMap xb(input.data().data() + b * in_stride, cin, win.cols());
    MatrixMap(col.data(), win.rows(), win.cols()).noalias() = wm.transpose() * xb;
    double* ob = od.data() + b * out_stride;
    col2im(col.data(), win, ob);
    for (std::size_t c = 0; c < cout; ++c) {
      const double bc = bias.data()[c];
      for (std::size_t i = 0; i < oh * ow; ++i) ob[c * oh * ow + i] += bc;
    }
  }

  if (g.track({&input, &kernel, &bias}, out)) {
    g.record(out, [input, kernel, bias, out, win, batch, cin, cout, in_stride, out_stride]() mutable {
      const auto dout = out.grad();
      AlignedBuffer col(win.rows() * win.cols());
      const ConstMatrixMap wm(kernel.data().data(), cin, win.rows());
      const std::size_t plane = win.height * win.width;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* gb = dout.data() + b * out_stride;
        if (bias.requires_grad()) {
          auto gbias = bias.mutable_grad();
          for (std::size_t c = 0; c < cout; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += gb[c * plane + i];
            gbias[c] += s;
          }
        }
        if (!kernel.requires_grad() && !input.requires_grad()) continue;
        im2col(gb, win, col.data());
        const ConstMatrixMap cm(col.data(), win.rows(), win.cols());
        if (kernel.requires_grad()) {
          const ConstMatrixMap xb(input.data().data() + b * in_stride, cin, win.cols());
          MatrixMap(kernel.mutable_grad().data(), cin, win.rows()).noalias() += xb * cm.transpose();
        }
        if (input.requires_grad()) {
          MatrixMap(input.mutable_grad().data() + b * in_stride, cin, win.cols()).noalias() += wm * cm;
        }
      }
    });
  }
  return out;
}

}  // namespace emd::ops
