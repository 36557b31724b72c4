#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "atomkit/tensor.hpp"

namespace atomkit::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool grad = true) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Norm-wise relative error between two gradient arrays.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nb));
  return scale < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

/// Largest relative error over all inputs between backward() and central
/// differences of `loss` (which must rebuild its graph on every call).
inline double gradient_check(std::vector<Tensor>& inputs, const std::function<Tensor()>& loss,
                             double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  backward(loss());
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(t.numel());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = loss().item();
      data[i] = keep - h;
      const double down = loss().item();
      data[i] = keep;
      numeric[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

/// sum(out * w) for a fixed random w, a scalar with a generic gradient.
inline Tensor probe_loss(const Tensor& out, const Tensor& w) { return sum(mul(out, w)); }

}  // namespace atomkit::testing
