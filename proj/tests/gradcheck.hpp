#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "emd/graph.hpp"
#include "emd/ops.hpp"
#include "emd/params.hpp"

namespace emd::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, scale);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Random values with |x| >= margin, for ops with a kink at zero.
inline Tensor random_away_from_zero(Shape shape, Rng& rng, double margin = 1e-2) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    x = rng.normal(0.0, 1.0);
    if (std::fabs(x) < margin) x = x < 0.0 ? x - margin : x + margin;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor::from(std::move(shape), std::move(v));
}

// sum(out * w) for a fixed random w, so every output element matters.
inline Tensor project(Graph& g, const Tensor& out, std::uint64_t seed) {
  Rng rng(seed ^ 0xC0FFEEULL);
  const Tensor w = random_tensor(out.shape(), rng, 1.0, false);
  return ops::sum(g, ops::mul(g, out, w));
}

inline double norm2(std::span<const double> v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double scale = std::max(norm2(a), norm2(b));
  return scale == 0.0 ? 0.0 : norm2(d) / scale;
}

// Compares backward() against central differences of the scalar `f` with
// respect to every element of `inputs` (or `max_probes` random elements of
// each when nonzero).
inline double gradient_error(const std::function<Tensor(Graph&)>& f, const std::vector<Tensor>& inputs,
                             double h = 1e-5, std::size_t max_probes = 0, std::uint64_t probe_seed = 0) {
  for (const Tensor& t : inputs) t.zero_grad();
  {
    Graph g;
    g.backward(f(g));
  }
  std::vector<double> analytic, numeric;
  Rng rng(probe_seed);
  for (const Tensor& t : inputs) {
    Tensor x = t;
    std::vector<std::size_t> probes(x.numel());
    std::iota(probes.begin(), probes.end(), std::size_t{0});
    if (max_probes != 0 && probes.size() > max_probes) {
      rng.shuffle(probes);
      probes.resize(max_probes);
    }
    const std::vector<double> grad(x.grad().begin(), x.grad().end());
    for (std::size_t i : probes) {
      const double saved = x.data()[i];
      x.mutable_data()[i] = saved + h;
      Graph gp(Graph::Mode::inference);
      const double fp = f(gp).item();
      x.mutable_data()[i] = saved - h;
      Graph gm(Graph::Mode::inference);
      const double fm = f(gm).item();
      x.mutable_data()[i] = saved;
      analytic.push_back(grad.empty() ? 0.0 : grad[i]);
      numeric.push_back((fp - fm) / (2.0 * h));
    }
  }
  return relative_error(analytic, numeric);
}

}  // namespace emd::testing
