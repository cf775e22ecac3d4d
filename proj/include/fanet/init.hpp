#pragma once

#include <cmath>

#include "fanet/random.hpp"
#include "fanet/tensor.hpp"

namespace fanet {

// Kaiming-uniform fan-in with ReLU gain: U(-b, b), b = sqrt(6 / fan_in).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<T> v(static_cast<size_t>(numel_of(shape)));
  for (auto& e : v) e = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> zeros_param(Shape shape) {
  return Tensor<T>::zeros(std::move(shape), true);
}

template <typename T>
Tensor<T> ones_param(Shape shape) {
  return Tensor<T>::full(std::move(shape), T(1), true);
}

}  // namespace fanet
