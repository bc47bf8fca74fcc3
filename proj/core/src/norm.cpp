#include <cmath>

#include "emd/ops.hpp"

namespace emd::ops {

namespace {

void require_image(const Tensor& t, const char* op) {
  if (t.rank() != 4) throw ShapeError(std::string(op) + ": expected B x C x H x W, got " + shape_string(t.shape()));
}

void require_channel_vector(const Tensor& t, std::size_t channels, const char* what) {
  if (t.rank() != 1 || t.dim(0) != channels) {
    throw ShapeError(std::string("batchnorm2d: ") + what + " " + shape_string(t.shape()) +
                     " does not match " + std::to_string(channels) + " channels");
  }
}

}  // namespace

BatchNormState BatchNormState::fresh(std::size_t channels) {
  return {Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
}

Tensor batchnorm2d(Graph& g, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   NormMode mode, BatchNormState& state, double momentum, double epsilon) {
  require_image(input, "batchnorm2d");
  if (!(epsilon > 0.0)) throw std::invalid_argument("batchnorm2d: epsilon must be positive");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  require_channel_vector(gamma, channels, "gamma");
  require_channel_vector(beta, channels, "beta");
  require_channel_vector(state.running_mean, channels, "running mean");
  require_channel_vector(state.running_var, channels, "running var");

  const auto x = input.data();
  const double count = static_cast<double>(batch * plane);
  std::vector<double> mean(channels), inv_std(channels);
  if (mode == NormMode::train) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      double mu = s / count;
      // One correction pass makes the mean exact for constant channels.
      double residual = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) residual += p[i] - mu;
      }
      mu += residual / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / count;
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + epsilon);
      const double unbiased = count > 1.0 ? ss / (count - 1.0) : var;
      rm[c] = (1.0 - momentum) * rm[c] + momentum * mu;
      rv[c] = (1.0 - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = state.running_mean.data()[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var.data()[c] + epsilon);
    }
  }

  Tensor out = Tensor::zeros(input.shape());
  auto y = out.mutable_data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (b * channels + c) * plane;
      const double ga = gamma.data()[c], be = beta.data()[c];
      for (std::size_t i = 0; i < plane; ++i) y[off + i] = ga * (x[off + i] - mean[c]) * inv_std[c] + be;
    }
  }

  if (g.track({&input, &gamma, &beta}, out)) {
    const bool batch_stats = mode == NormMode::train;
    g.record(out, [input, gamma, beta, out, mean, inv_std, batch, channels, plane, count,
                   batch_stats]() mutable {
      const auto dy = out.grad();
      const auto x = input.data();
      for (std::size_t c = 0; c < channels; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t off = (b * channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double xhat = (x[off + i] - mean[c]) * inv_std[c];
            sum_dy += dy[off + i];
            sum_dy_xhat += dy[off + i] * xhat;
          }
        }
        if (gamma.requires_grad()) gamma.mutable_grad()[c] += sum_dy_xhat;
        if (beta.requires_grad()) beta.mutable_grad()[c] += sum_dy;
        if (!input.requires_grad()) continue;
        auto dx = input.mutable_grad();
        const double ga = gamma.data()[c];
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t off = (b * channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            if (batch_stats) {
              const double xhat = (x[off + i] - mean[c]) * inv_std[c];
              dx[off + i] += ga * inv_std[c] / count * (count * dy[off + i] - sum_dy - xhat * sum_dy_xhat);
            } else {
              dx[off + i] += ga * inv_std[c] * dy[off + i];
            }
          }
        }
      }
    });
  }
  return out;
}

std::pair<Tensor, Tensor> channel_mean_std(Graph& g, const Tensor& input, double epsilon) {
  require_image(input, "channel_mean_std");
  if (epsilon < 0.0) throw std::invalid_argument("channel_mean_std: epsilon must be non-negative");
  const std::size_t groups = input.dim(0) * input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  const auto x = input.data();
  Tensor mean = Tensor::zeros({input.dim(0), input.dim(1)});
  Tensor stdev = Tensor::zeros({input.dim(0), input.dim(1)});
  auto m = mean.mutable_data();
  auto s = stdev.mutable_data();
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
    m[gi] = mu;
    s[gi] = std::sqrt(ss / static_cast<double>(plane) + epsilon);
  }

  if (g.track({&input}, mean)) {
    g.record(mean, [input, mean, groups, plane]() mutable {
      const auto dm = mean.grad();
      auto dx = input.mutable_grad();
      const double inv = 1.0 / static_cast<double>(plane);
      for (std::size_t gi = 0; gi < groups; ++gi) {
        for (std::size_t i = 0; i < plane; ++i) dx[gi * plane + i] += dm[gi] * inv;
      }
    });
  }
  if (g.track({&input}, stdev)) {
    g.record(stdev, [input, mean, stdev, groups, plane]() mutable {
      const auto ds = stdev.grad();
      const auto x = input.data();
      auto dx = input.mutable_grad();
      const double inv = 1.0 / static_cast<double>(plane);
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const double sd = stdev.data()[gi];
        if (sd == 0.0) continue;
        const double mu = mean.data()[gi];
        const double coef = ds[gi] * inv / sd;
        for (std::size_t i = 0; i < plane; ++i) dx[gi * plane + i] += coef * (x[gi * plane + i] - mu);
      }
    });
  }
  return {mean, stdev};
}

Tensor instance_normalize(Graph& g, const Tensor& input, double epsilon) {
  require_image(input, "instance_normalize");
  if (!(epsilon > 0.0)) throw std::invalid_argument("instance_normalize: epsilon must be positive");
  const std::size_t groups = input.dim(0) * input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  const auto x = input.data();
  Tensor out = Tensor::zeros(input.shape());
  auto y = out.mutable_data();
  std::vector<double> inv_std(groups);
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
    inv_std[gi] = 1.0 / std::sqrt(ss / static_cast<double>(plane) + epsilon);
    for (std::size_t i = 0; i < plane; ++i) y[gi * plane + i] = (p[i] - mu) * inv_std[gi];
  }

  if (g.track({&input}, out)) {
    g.record(out, [input, out, inv_std, groups, plane]() mutable {
      const auto dy = out.grad();
      const auto y = out.data();
      auto dx = input.mutable_grad();
      const double n = static_cast<double>(plane);
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t off = gi * plane;
        double sum_dy = 0.0, sum_dy_y = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dy[off + i];
          sum_dy_y += dy[off + i] * y[off + i];
        }
        for (std::size_t i = 0; i < plane; ++i) {
          dx[off + i] += inv_std[gi] / n * (n * dy[off + i] - sum_dy - y[off + i] * sum_dy_y);
        }
      }
    });
  }
  return out;
}

Tensor channel_affine(Graph& g, const Tensor& input, const Tensor& scale, const Tensor& shift) {
  require_image(input, "channel_affine");
  const Shape bc{input.dim(0), input.dim(1)};
  if (scale.shape() != bc || shift.shape() != bc) {
    throw ShapeError("channel_affine: scale " + shape_string(scale.shape()) + " / shift " +
                     shape_string(shift.shape()) + " must be " + shape_string(bc));
  }
  const std::size_t groups = bc[0] * bc[1];
  const std::size_t plane = input.dim(2) * input.dim(3);
  Tensor out = Tensor::zeros(input.shape());
  auto y = out.mutable_data();
  const auto x = input.data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double a = scale.data()[gi], s = shift.data()[gi];
    for (std::size_t i = 0; i < plane; ++i) y[gi * plane + i] = x[gi * plane + i] * a + s;
  }
  if (g.track({&input, &scale, &shift}, out)) {
    g.record(out, [input, scale, shift, out, groups, plane]() mutable {
      const auto dy = out.grad();
      const auto x = input.data();
      for (std::size_t gi = 0; gi < groups; ++gi) {
        double sum_dy = 0.0, sum_dy_x = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dy[gi * plane + i];
          sum_dy_x += dy[gi * plane + i] * x[gi * plane + i];
        }
        if (scale.requires_grad()) scale.mutable_grad()[gi] += sum_dy_x;
        if (shift.requires_grad()) shift.mutable_grad()[gi] += sum_dy;
        if (input.requires_grad()) {
          auto dx = input.mutable_grad();
          const double a = scale.data()[gi];
          for (std::size_t i = 0; i < plane; ++i) dx[gi * plane + i] += a * dy[gi * plane + i];
        }
      }
    });
  }
  return out;
}

}  // namespace emd::ops
