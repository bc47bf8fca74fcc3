#include "emd/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>

namespace emd::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Elementwise op with derivative expressed through (x, y).
template <typename Fwd, typename Deriv>
Tensor unary(Graph& g, const Tensor& input, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::zeros(input.shape());
  const auto x = input.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  if (g.track({&input}, out)) {
    g.record(out, [input, out, deriv]() mutable {
      const auto x = input.data();
      const auto y = out.data();
      const auto dy = out.grad();
      auto dx = input.mutable_grad();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * deriv(x[i], y[i]);
    });
  }
  return out;
}

}  // namespace

Tensor leaky_relu(Graph& g, const Tensor& input, double slope) {
  return unary(
      g, input, [slope](double x) { return x >= 0.0 ? x : slope * x; },
      [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(Graph& g, const Tensor& input) {
  return unary(
      g, input,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(Graph& g, const Tensor& input) {
  return unary(
      g, input, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(Graph& g, const Tensor& input) {
  return unary(
      g, input, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b) {
  if (!b.defined()) return a;
  if (a.rank() != b.rank() || (a.rank() != 4 && a.rank() != 2) || a.dim(0) != b.dim(0) ||
      (a.rank() == 4 && (a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)))) {
    throw ShapeError("concat_channels: incompatible " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const std::size_t batch = a.dim(0);
  const std::size_t sa = a.numel() / batch, sb = b.numel() / batch;
  Shape shape = a.shape();
  shape[1] += b.dim(1);
  Tensor out = Tensor::zeros(shape);
  auto y = out.mutable_data();
  for (std::size_t n = 0; n < batch; ++n) {
    std::memcpy(y.data() + n * (sa + sb), a.data().data() + n * sa, sa * sizeof(double));
    std::memcpy(y.data() + n * (sa + sb) + sa, b.data().data() + n * sb, sb * sizeof(double));
  }
  if (g.track({&a, &b}, out)) {
    g.record(out, [a, b, out, batch, sa, sb]() mutable {
      const auto dy = out.grad();
      for (std::size_t n = 0; n < batch; ++n) {
        if (a.requires_grad()) {
          auto da = a.mutable_grad();
          for (std::size_t i = 0; i < sa; ++i) da[n * sa + i] += dy[n * (sa + sb) + i];
        }
        if (b.requires_grad()) {
          auto db = b.mutable_grad();
          for (std::size_t i = 0; i < sb; ++i) db[n * sb + i] += dy[n * (sa + sb) + sa + i];
        }
      }
    });
  }
  return out;
}

Tensor slice_channels(Graph& g, const Tensor& input, std::size_t begin, std::size_t end) {
  if ((input.rank() != 4 && input.rank() != 2) || begin >= end || end > input.dim(1)) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_string(input.shape()));
  }
  const std::size_t batch = input.dim(0);
  const std::size_t inner = input.numel() / (batch * input.dim(1));
  const std::size_t row_in = input.dim(1) * inner;
  const std::size_t width = (end - begin) * inner;
  Shape shape = input.shape();
  shape[1] = end - begin;
  Tensor out = Tensor::zeros(shape);
  auto y = out.mutable_data();
  for (std::size_t n = 0; n < batch; ++n) {
    std::memcpy(y.data() + n * width, input.data().data() + n * row_in + begin * inner, width * sizeof(double));
  }
  if (g.track({&input}, out)) {
    g.record(out, [input, out, batch, inner, row_in, width, begin]() mutable {
      const auto dy = out.grad();
      auto dx = input.mutable_grad();
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t i = 0; i < width; ++i) dx[n * row_in + begin * inner + i] += dy[n * width + i];
      }
    });
  }
  return out;
}

Tensor reshape(Graph& g, const Tensor& input, Shape shape) {
  if (shape_numel(shape) != input.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(input.shape()) + " as " + shape_string(shape));
  }
  Tensor out = Tensor::from(std::move(shape), std::vector<double>(input.data().begin(), input.data().end()));
  if (g.track({&input}, out)) {
    g.record(out, [input, out]() mutable {
      const auto dy = out.grad();
      auto dx = input.mutable_grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    });
  }
  return out;
}

Tensor upsample_nearest(Graph& g, const Tensor& input, int factor) {
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1, got " + std::to_string(factor));
  if (input.rank() != 4) throw ShapeError("upsample_nearest: expected B x C x H x W");
  const std::size_t f = static_cast<std::size_t>(factor);
  const std::size_t groups = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  Tensor out = Tensor::zeros({input.dim(0), input.dim(1), h * f, w * f});
  auto y = out.mutable_data();
  const auto x = input.data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t i = 0; i < h * f; ++i) {
      for (std::size_t j = 0; j < w * f; ++j) y[(gi * h * f + i) * w * f + j] = x[(gi * h + i / f) * w + j / f];
    }
  }
  if (g.track({&input}, out)) {
    g.record(out, [input, out, groups, h, w, f]() mutable {
      const auto dy = out.grad();
      auto dx = input.mutable_grad();
      for (std::size_t gi = 0; gi < groups; ++gi) {
        for (std::size_t i = 0; i < h * f; ++i) {
          for (std::size_t j = 0; j < w * f; ++j) dx[(gi * h + i / f) * w + j / f] += dy[(gi * h * f + i) * w * f + j];
        }
      }
    });
  }
  return out;
}

Tensor crop(Graph& g, const Tensor& input, std::size_t height, std::size_t width) {
  if (input.rank() != 4 || height == 0 || width == 0 || height > input.dim(2) || width > input.dim(3)) {
    throw ShapeError("crop: cannot take " + std::to_string(height) + " x " + std::to_string(width) + " from " +
                     shape_string(input.shape()));
  }
  const std::size_t groups = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  Tensor out = Tensor::zeros({input.dim(0), input.dim(1), height, width});
  auto y = out.mutable_data();
  const auto x = input.data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t i = 0; i < height; ++i) {
      for (std::size_t j = 0; j < width; ++j) y[(gi * height + i) * width + j] = x[(gi * h + i) * w + j];
    }
  }
  if (g.track({&input}, out)) {
    g.record(out, [input, out, groups, h, w, height, width]() mutable {
      const auto dy = out.grad();
      auto dx = input.mutable_grad();
      for (std::size_t gi = 0; gi < groups; ++gi) {
        for (std::size_t i = 0; i < height; ++i) {
          for (std::size_t j = 0; j < width; ++j) dx[(gi * h + i) * w + j] += dy[(gi * height + i) * width + j];
        }
      }
    });
  }
  return out;
}

Tensor global_avg_pool(Graph& g, const Tensor& input) {
  if (input.rank() != 4) throw ShapeError("global_avg_pool: expected B x C x H x W");
  const std::size_t groups = input.dim(0) * input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  Tensor out = Tensor::zeros({input.dim(0), input.dim(1), 1, 1});
  auto y = out.mutable_data();
  const auto x = input.data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += x[gi * plane + i];
    y[gi] = s / static_cast<double>(plane);
  }
  if (g.track({&input}, out)) {
    g.record(out, [input, out, groups, plane]() mutable {
      const auto dy = out.grad();
      auto dx = input.mutable_grad();
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const double v = dy[gi] / static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) dx[gi * plane + i] += v;
      }
    });
  }
  return out;
}

Tensor fully_connected(Graph& g, const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || weight.dim(1) != input.dim(1) ||
      bias.dim(0) != weight.dim(0)) {
    throw ShapeError("fully_connected: input " + shape_string(input.shape()) + ", weight " +
                     shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()) + " disagree");
  }
  const std::size_t batch = input.dim(0), cin = input.dim(1), cout = weight.dim(0);
  Tensor out = Tensor::zeros({batch, cout});
  MatrixMap y(out.mutable_data().data(), batch, cout);
  const ConstMatrixMap x(input.data().data(), batch, cin);
  const ConstMatrixMap w(weight.data().data(), cout, cin);
  y.noalias() = x * w.transpose();
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), cout);
  if (g.track({&input, &weight, &bias}, out)) {
    g.record(out, [input, weight, bias, out, batch, cin, cout]() mutable {
      const ConstMatrixMap dy(out.grad().data(), batch, cout);
      if (input.requires_grad()) {
        MatrixMap(input.mutable_grad().data(), batch, cin).noalias() +=
            dy * ConstMatrixMap(weight.data().data(), cout, cin);
      }
      if (weight.requires_grad()) {
        MatrixMap(weight.mutable_grad().data(), cout, cin).noalias() +=
            dy.transpose() * ConstMatrixMap(input.data().data(), batch, cin);
      }
      if (bias.requires_grad()) {
        auto db = bias.mutable_grad();
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t o = 0; o < cout; ++o) db[o] += dy(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(o));
      }
    });
  }
  return out;
}

Tensor bilinear_contract(Graph& g, const Tensor& style, const Tensor& w, const Tensor& content) {
  if (style.rank() != 2 || content.rank() != 2 || w.rank() != 3 || style.dim(0) != content.dim(0) ||
      w.dim(0) != style.dim(1) || w.dim(2) != content.dim(1)) {
    throw ShapeError("bilinear_contract: style " + shape_string(style.shape()) + ", tensor " +
                     shape_string(w.shape()) + ", content " + shape_string(content.shape()) + " disagree");
  }
  const std::size_t batch = style.dim(0), r = w.dim(0), k = w.dim(1), bc = w.dim(2);
  const ConstMatrixMap wm(w.data().data(), r * k, bc);
  Tensor out = Tensor::zeros({batch, k});
  auto y = out.mutable_data();
  Eigen::VectorXd t(r * k);
  for (std::size_t n = 0; n < batch; ++n) {
    // t[r,k] = sum_c w[r,k,c] content[n,c]; out[n,k] = sum_r style[n,r] t[r,k]
    t.noalias() = wm * Eigen::Map<const Eigen::VectorXd>(content.data().data() + n * bc, bc);
    const ConstMatrixMap tm(t.data(), r, k);
    Eigen::Map<Eigen::RowVectorXd>(y.data() + n * k, k).noalias() =
        Eigen::Map<const Eigen::RowVectorXd>(style.data().data() + n * r, r) * tm;
  }
  if (g.track({&style, &w, &content}, out)) {
    g.record(out, [style, w, content, out, batch, r, k, bc]() mutable {
      const ConstMatrixMap wm(w.data().data(), r * k, bc);
      const auto dy = out.grad();
      Eigen::VectorXd t(r * k);
      RowMatrix u(r, k);
      for (std::size_t n = 0; n < batch; ++n) {
        const Eigen::Map<const Eigen::VectorXd> cn(content.data().data() + n * bc, bc);
        const Eigen::Map<const Eigen::VectorXd> sn(style.data().data() + n * r, r);
        const Eigen::Map<const Eigen::VectorXd> dn(dy.data() + n * k, k);
        if (style.requires_grad()) {
          t.noalias() = wm * cn;
          Eigen::Map<Eigen::VectorXd>(style.mutable_grad().data() + n * r, r).noalias() +=
              ConstMatrixMap(t.data(), r, k) * dn;
        }
        if (!w.requires_grad() && !content.requires_grad()) continue;
        u.noalias() = sn * dn.transpose();
        const Eigen::Map<const Eigen::VectorXd> uv(u.data(), r * k);
        if (content.requires_grad()) {
          Eigen::Map<Eigen::VectorXd>(content.mutable_grad().data() + n * bc, bc).noalias() += wm.transpose() * uv;
        }
        if (w.requires_grad()) {
          MatrixMap(w.mutable_grad().data(), r * k, bc).noalias() += uv * cn.transpose();
        }
      }
    });
  }
  return out;
}

namespace {

template <typename Fwd>
Tensor binary(Graph& g, const Tensor& a, const Tensor& b, const char* name, Fwd fwd, double sign_b,
              bool product) {
  require_same_shape(a, b, name);
  Tensor out = Tensor::zeros(a.shape());
  auto y = out.mutable_data();
  const auto x1 = a.data();
  const auto x2 = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(x1[i], x2[i]);
  if (g.track({&a, &b}, out)) {
    g.record(out, [a, b, out, sign_b, product]() mutable {
      const auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.mutable_grad();
        const auto x2 = b.data();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += product ? dy[i] * x2[i] : dy[i];
      }
      if (b.requires_grad()) {
        auto db = b.mutable_grad();
        const auto x1 = a.data();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += product ? dy[i] * x1[i] : sign_b * dy[i];
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  return binary(g, a, b, "add", [](double x, double y) { return x + y; }, 1.0, false);
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  return binary(g, a, b, "sub", [](double x, double y) { return x - y; }, -1.0, false);
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  return binary(g, a, b, "mul", [](double x, double y) { return x * y; }, 1.0, true);
}

Tensor scale(Graph& g, const Tensor& input, double factor) {
  return unary(
      g, input, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor sum(Graph& g, const Tensor& input) {
  double s = 0.0;
  for (double v : input.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (g.track({&input}, out)) {
    g.record(out, [input, out]() mutable {
      const double d = out.grad()[0];
      for (double& v : input.mutable_grad()) v += d;
    });
  }
  return out;
}

Tensor mean(Graph& g, const Tensor& input) {
  return scale(g, sum(g, input), 1.0 / static_cast<double>(input.numel()));
}

Tensor weighted_sum(Graph& g, std::initializer_list<std::pair<double, Tensor>> parts) {
  std::vector<std::pair<double, Tensor>> terms(parts);
  double s = 0.0;
  for (const auto& [wgt, t] : terms) s += wgt * t.item();
  Tensor out = Tensor::scalar(s);
  bool tracked = false;
  for (const auto& [wgt, t] : terms) tracked = g.track({&t}, out) || tracked;
  if (tracked) {
    g.record(out, [terms, out]() mutable {
      const double d = out.grad()[0];
      for (auto& [wgt, t] : terms) {
        if (t.requires_grad()) t.mutable_grad()[0] += wgt * d;
      }
    });
  }
  return out;
}

}  // namespace emd::ops
