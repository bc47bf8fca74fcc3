#include "emd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace emd::losses {

namespace {

void require_same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": size mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  if (a.empty()) throw ShapeError(std::string(what) + ": empty images");
}

}  // namespace

std::vector<std::uint8_t> binarize(std::span<const double> image) {
  std::vector<std::uint8_t> mask(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = image[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::domain_error("binarize: pixel " + std::to_string(i) + " = " + std::to_string(v) +
                              " lies outside [0, 1]");
    }
    mask[i] = v < kBlackThreshold ? 1 : 0;
  }
  return mask;
}

std::size_t count_black(std::span<const double> image) {
  const auto mask = binarize(image);
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

ThicknessWeight size_thickness_weight(std::span<const double> target) {
  if (target.empty()) throw ShapeError("size_thickness_weight: empty image");
  const std::size_t black = count_black(target);
  if (black == 0) return {1.0 / static_cast<double>(target.size()), true};
  return {1.0 / static_cast<double>(black), false};
}

double black_pixel_mean(std::span<const double> target) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : target) {
    if (v < kBlackThreshold) {
      sum += v;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

std::vector<double> darkness_weight(std::span<const std::span<const double>> targets) {
  if (targets.empty()) throw std::invalid_argument("darkness_weight: empty batch");
  std::vector<double> means;
  means.reserve(targets.size());
  for (const auto& t : targets) {
    binarize(t);  // range check
    means.push_back(black_pixel_mean(t));
  }
  const double top = *std::max_element(means.begin(), means.end());
  std::vector<double> w(means.size());
  double z = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    w[i] = std::exp(means[i] - top);
    z += w[i];
  }
  for (double& v : w) v /= z;
  return w;
}

BatchWeights batch_weights(const Tensor& targets) {
  if (targets.rank() != 4 || targets.dim(1) != 1) {
    throw ShapeError("batch_weights: targets must be B x 1 x H x W, got " + shape_string(targets.shape()));
  }
  const std::size_t batch = targets.dim(0);
  const std::size_t plane = targets.dim(2) * targets.dim(3);
  std::vector<std::span<const double>> views;
  BatchWeights w;
  for (std::size_t b = 0; b < batch; ++b) {
    views.push_back(targets.data().subspan(b * plane, plane));
    const auto st = size_thickness_weight(views.back());
    w.st.push_back(st.weight);
    w.degenerate.push_back(st.degenerate);
  }
  w.d = darkness_weight(views);
  return w;
}

Tensor weighted_l1_loss(Graph& g, const Tensor& generated, const Tensor& targets) {
  require_same_shape(generated, targets, "weighted_l1_loss");
  const BatchWeights w = batch_weights(targets);
  const std::size_t batch = targets.dim(0);
  const std::size_t plane = targets.dim(2) * targets.dim(3);
  std::vector<double> coef(batch);
  double loss = 0.0;
  const auto x = generated.data();
  const auto t = targets.data();
  for (std::size_t b = 0; b < batch; ++b) {
    coef[b] = w.st[b] * w.d[b];
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += std::fabs(x[b * plane + i] - t[b * plane + i]);
    loss += coef[b] * s;
  }
  Tensor out = Tensor::scalar(loss);
  if (g.track({&generated}, out)) {
    g.record(out, [generated, targets, out, coef, plane]() mutable {
      const double d = out.grad()[0];
      const auto x = generated.data();
      const auto t = targets.data();
      auto dx = generated.mutable_grad();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double diff = x[i] - t[i];
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        dx[i] += d * coef[i / plane] * sign;
      }
    });
  }
  return out;
}

double l1_metric(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b, "l1_metric");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double rmse_metric(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b, "rmse_metric");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

double pdar_metric(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b, "pdar_metric");
  const auto ma = binarize(a);
  const auto mb = binarize(b);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) differ += ma[i] != mb[i];
  return static_cast<double>(differ) / static_cast<double>(ma.size());
}

}  // namespace emd::losses
